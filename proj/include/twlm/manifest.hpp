// Run manifests: a JSON record of the resolved command written before any
// output, so identical manifests imply identical outputs.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace twlm {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // resolved key-values
  std::map<std::string, std::string> inputs;  // path -> content fingerprint
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;

  void add_input(const std::string& path);  // fingerprints the file bytes
  void write(const std::string& path) const;
};

// FNV-1a over a file's bytes, rendered as fixed-width hex.
std::string file_fingerprint(const std::string& path);

}  // namespace twlm
