#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace asal::config {

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

// Flat dotted-key configuration. A file is a sequence of `key = value`
// lines; blank lines and lines whose first non-space character is `#` are
// ignored. Keys are dot-separated identifier segments ([A-Za-z0-9_]+); the
// value is the rest of the line, trimmed, and must be non-empty. A repeated
// key keeps the last assignment. Command-line overrides land through set().
class Config {
 public:
  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const;

  // Typed reads fall back when the key is absent and throw
  // std::invalid_argument naming the key when the value does not parse.
  // Every read marks the key consumed, so commands can reject leftovers.
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::optional<std::string> maybe(const std::string& key) const;

  // Keys present but never read through any getter.
  std::vector<std::string> unread_keys() const;

  // Canonical text: keys in sorted order, one `key=value` line each. The
  // hash is FNV-1a over this text, so equal resolved configurations hash
  // equal regardless of file layout.
  std::string canonical() const;
  std::uint64_t hash() const;

  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> read_;
};

// Throws std::invalid_argument with a 1-based line number on malformed
// input. Tolerates trailing carriage returns.
Config parse_config(const std::string& text);

// Throws std::runtime_error when the file cannot be read.
Config load_config(const std::string& path);

}  // namespace asal::config
