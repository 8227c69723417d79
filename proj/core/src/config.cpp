#include "asal/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace asal::config {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

bool valid_key(std::string_view key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  bool prev_dot = true;
  for (char c : key) {
    if (c == '.') {
      if (prev_dot) return false;  // empty segment
      prev_dot = true;
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      prev_dot = false;
    } else {
      return false;
    }
  }
  return !prev_dot;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* kind) {
  throw std::invalid_argument("config: key '" + key + "' holds '" + value +
                              "', not a " + kind);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) {
    throw std::invalid_argument("config: invalid key '" + key + "'");
  }
  if (trim(value).empty()) {
    throw std::invalid_argument("config: empty value for key '" + key + "'");
  }
  entries_[key] = std::string(trim(value));
}

bool Config::contains(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::optional<std::string> Config::maybe(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  read_.insert(key);
  return it->second;
}

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  auto v = maybe(key);
  return v ? *v : fallback;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto v = maybe(key);
  if (!v) return fallback;
  long long out = 0;
  const char* first = v->data();
  const char* last = first + v->size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) bad_value(key, *v, "whole number");
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = maybe(key);
  if (!v) return fallback;
  double out = 0.0;
  const char* first = v->data();
  const char* last = first + v->size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) bad_value(key, *v, "number");
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = maybe(key);
  if (!v) return fallback;
  if (*v == "true") return true;
  if (*v == "false") return false;
  bad_value(key, *v, "boolean (true or false)");
}

std::vector<std::string> Config::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : entries_) {
    if (read_.count(key) == 0) out.push_back(key);
  }
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, value] : entries_) {  // std::map iterates sorted
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

Config parse_config(const std::string& text) {
  Config out;
  std::istringstream is(text);
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    const std::string_view key = trim(body.substr(0, eq));
    const std::string_view value = trim(body.substr(eq + 1));
    if (!valid_key(key)) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": invalid key '" + std::string(key) + "'");
    }
    if (value.empty()) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": empty value for key '" +
                                  std::string(key) + "'");
    }
    out.set(std::string(key), std::string(value));
  }
  return out;
}

Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("config: cannot read '" + path + "'");
  }
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return parse_config(buffer.str());
}

}  // namespace asal::config
