// Checkpoint container and vocabulary-aware embedding remapping.
//
// On-disk layout: magic "TWLM", u16 format version, u32 header length, a
// UTF-8 JSON header (config, step, vocab fingerprint, tensor directory with
// name/dtype/shape/byte offset), then raw tensor data as 32-bit
// little-endian floats, row-major.
#pragma once

#include <cstdint>
#include <string>

#include "twlm/error.hpp"
#include "twlm/model.hpp"
#include "twlm/vocab.hpp"

namespace twlm {

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
  std::uint64_t vocab_fingerprint = 0;
  std::int64_t step = 0;
};

enum class CheckpointErrorKind {
  bad_magic,
  bad_version,
  corrupt_header,
  shape_mismatch,
  truncated,
};

class CheckpointError : public DataError {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : DataError(what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the token embedding (and MLM output bias) for a new vocabulary:
/// rows of tokens present in both vocabularies are copied verbatim to their
/// new ids, rows of new tokens are drawn Normal(0, 0.02^2) from `seed`, and
/// every other tensor is copied unchanged.  Requires the checkpoint to match
/// old_vocab and every old token to exist in new_vocab.
Checkpoint remap_embeddings(const Checkpoint& ckpt, const Vocabulary& old_vocab,
                            const Vocabulary& new_vocab, std::uint64_t seed);

}  // namespace twlm
