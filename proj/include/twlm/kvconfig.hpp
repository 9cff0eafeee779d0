// Flat key=value config files: one pair per line, '#' comments, UTF-8.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace twlm {

class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text,
                              const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  // Typed accessors throw UsageError naming the key on parse failure.
  std::string require(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::int64_t require_int(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  void set(const std::string& key, const std::string& value);

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
  std::string origin_;
};

// Splits "a,b,c" into trimmed non-empty parts.
std::vector<std::string> split_csv(const std::string& s);

}  // namespace twlm
