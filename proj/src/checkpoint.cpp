#include "twlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "twlm/rng.hpp"

namespace twlm {

namespace {

constexpr char kMagic[4] = {'T', 'W', 'L', 'M'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_f32(std::string& out, float f) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  put_u32(out, bits);
}

std::uint16_t get_u16(const std::string& s, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off]) |
                                    (static_cast<unsigned char>(s[off + 1])
                                     << 8));
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)]);
  }
  return v;
}

float get_f32(const std::string& s, std::size_t off) {
  return std::bit_cast<float>(get_u32(s, off));
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"vocab_size", c.vocab_size}, {"hidden", c.hidden},
      {"embed", c.embed},           {"layers", c.layers},
      {"heads", c.heads},           {"ff_dim", c.ff_dim},
      {"max_positions", c.max_positions},
      {"share_layers", c.share_layers},
      {"dropout", c.dropout},       {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::int32_t>();
  c.hidden = j.at("hidden").get<std::int32_t>();
  c.embed = j.at("embed").get<std::int32_t>();
  c.layers = j.at("layers").get<std::int32_t>();
  c.heads = j.at("heads").get<std::int32_t>();
  c.ff_dim = j.at("ff_dim").get<std::int32_t>();
  c.max_positions = j.at("max_positions").get<std::int32_t>();
  c.share_layers = j.at("share_layers").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ckpt.config.validate();

  nlohmann::json directory = nlohmann::json::array();
  std::string payload;
  ckpt.params.for_each([&](const std::string& name, const Tensor& t) {
    directory.push_back({{"name", name},
                         {"dtype", "f32"},
                         {"shape", t.shape},
                         {"offset", payload.size()}});
    for (const double v : t.data) put_f32(payload, static_cast<float>(v));
  });

  nlohmann::json header{{"config", config_to_json(ckpt.config)},
                        {"step", ckpt.step},
                        {"vocab_fingerprint", ckpt.vocab_fingerprint},
                        {"tensors", directory}};
  const std::string header_str = header.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out += header_str;
  out += payload;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());

  if (bytes.size() < 10) {
    throw CheckpointError(CheckpointErrorKind::truncated,
                          "checkpoint truncated before header: " + path);
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrorKind::bad_magic,
                          "bad checkpoint magic in " + path);
  }
  const std::uint16_t version = get_u16(bytes, 4);
  if (version != kVersion) {
    throw CheckpointError(CheckpointErrorKind::bad_version,
                          "unsupported checkpoint version " +
                              std::to_string(version) + " in " + path);
  }
  const std::uint32_t header_len = get_u32(bytes, 6);
  if (bytes.size() < 10 + static_cast<std::size_t>(header_len)) {
    throw CheckpointError(CheckpointErrorKind::truncated,
                          "checkpoint truncated inside header: " + path);
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(10, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::corrupt_header,
                          std::string("corrupt checkpoint header: ") +
                              e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.vocab_fingerprint =
        header.at("vocab_fingerprint").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::corrupt_header,
                          std::string("corrupt checkpoint header: ") +
                              e.what());
  }
  ckpt.config.validate();
  ckpt.params = zeros_like_params(ckpt.config);

  const std::size_t data_start = 10 + header_len;
  const nlohmann::json& directory = header.at("tensors");
  std::size_t entry = 0;
  ckpt.params.for_each([&](const std::string& name, Tensor& t) {
    if (entry >= directory.size()) {
      throw CheckpointError(CheckpointErrorKind::corrupt_header,
                            "tensor directory missing entry for " + name);
    }
    const nlohmann::json& d = directory[entry++];
    if (d.at("name").get<std::string>() != name) {
      throw CheckpointError(
          CheckpointErrorKind::shape_mismatch,
          "tensor directory out of order: expected " + name + ", found " +
              d.at("name").get<std::string>());
    }
    const auto shape = d.at("shape").get<std::vector<std::int64_t>>();
    if (shape != t.shape) {
      throw CheckpointError(CheckpointErrorKind::shape_mismatch,
                            "declared shape mismatch for tensor " + name);
    }
    const std::size_t offset = d.at("offset").get<std::size_t>();
    const std::size_t need = t.data.size() * 4;
    if (data_start + offset + need > bytes.size()) {
      throw CheckpointError(CheckpointErrorKind::truncated,
                            "checkpoint truncated in tensor " + name);
    }
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      t.data[i] = static_cast<double>(
          get_f32(bytes, data_start + offset + i * 4));
    }
  });
  if (entry != directory.size()) {
    throw CheckpointError(CheckpointErrorKind::corrupt_header,
                          "tensor directory has extra entries");
  }
  return ckpt;
}

Checkpoint remap_embeddings(const Checkpoint& ckpt, const Vocabulary& old_vocab,
                            const Vocabulary& new_vocab, std::uint64_t seed) {
  if (ckpt.vocab_fingerprint != old_vocab.fingerprint()) {
    throw DataError("checkpoint fingerprint does not match old vocabulary");
  }
  for (const std::string& t : old_vocab.tokens()) {
    if (!new_vocab.contains(t)) {
      throw DataError("old token missing from new vocabulary: " + t);
    }
  }

  Checkpoint out;
  out.config = ckpt.config;
  out.config.vocab_size = new_vocab.size();
  out.step = ckpt.step;
  out.vocab_fingerprint = new_vocab.fingerprint();
  out.params = zeros_like_params(out.config);

  // Copy every tensor that is not vocabulary-shaped.
  std::vector<const Tensor*> src;
  std::vector<std::string> src_names;
  ckpt.params.for_each([&](const std::string& name, const Tensor& t) {
    src.push_back(&t);
    src_names.push_back(name);
  });
  std::size_t k = 0;
  out.params.for_each([&](const std::string& name, Tensor& t) {
    if (name != src_names[k]) {
      throw DataError("parameter layout mismatch during remap at " + name);
    }
    if (name != "token_embed" && name != "mlm_output_bias") {
      t = *src[k];
    }
    ++k;
  });

  Rng rng(seed);
  const std::int64_t E = out.config.embed;
  for (std::int32_t nid = 0; nid < new_vocab.size(); ++nid) {
    const auto oid = old_vocab.id(new_vocab.token(nid));
    if (oid) {
      for (std::int64_t e = 0; e < E; ++e) {
        out.params.token_embed.at(nid, e) = ckpt.params.token_embed.at(*oid, e);
      }
      out.params.mlm_output_bias.at(nid) = ckpt.params.mlm_output_bias.at(*oid);
    } else {
      for (std::int64_t e = 0; e < E; ++e) {
        out.params.token_embed.at(nid, e) = rng.normal() * 0.02;
      }
      out.params.mlm_output_bias.at(nid) = 0.0;
    }
  }
  return out;
}

}  // namespace twlm
