#include "twlm/manifest.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "twlm/error.hpp"

namespace twlm {

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot fingerprint missing file: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[8192];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  char out[19];
  std::snprintf(out, sizeof(out), "%016llx",
                static_cast<unsigned long long>(h));
  return out;
}

void RunManifest::add_input(const std::string& path) {
  inputs[path] = file_fingerprint(path);
}

void RunManifest::write(const std::string& path) const {
  nlohmann::json j{{"command", command},
                   {"config", config},
                   {"inputs", inputs},
                   {"seed", seed},
                   {"tool_version", kToolVersion},
                   {"outputs", outputs}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace twlm
