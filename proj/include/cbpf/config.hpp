#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbpf {

/// Malformed configuration; the message names the source and line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` text with `#` comments. Values are kept as strings and
/// converted on access; conversion errors reference the defining line.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  /// Set or override a value (line 0 = command line).
  void set(const std::string& key, const std::string& value);

  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  std::vector<std::string> keys() const;
  /// Throws on any key not in `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  const Entry& entry(const std::string& key) const;
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::string source_ = "<config>";
  std::map<std::string, Entry> entries_;
};

/// Comma-separated list, whitespace trimmed, empty items rejected.
std::vector<std::string> split_list(const std::string& text);
double parse_double(const std::string& text);
std::uint64_t parse_u64(const std::string& text);

}  // namespace cbpf
