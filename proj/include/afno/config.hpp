#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace afno::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered `key = value` entries. Keys may carry dotted sections
/// (`model.hidden`); later assignments to a key replace earlier ones.
class KeyValues {
 public:
  void set(std::string key, std::string value);
  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Parses line-oriented `key = value` text. `#` starts a comment, blank
/// lines are skipped, and an optional `[section]` line prefixes the keys that
/// follow with `section.`. Errors carry the 1-based line number.
KeyValues parse(std::string_view text);
KeyValues parse_file(const std::string& path);

std::string serialize(const KeyValues& kv);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace afno::config
