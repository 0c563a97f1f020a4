#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cbpf/config.hpp"

namespace cbpf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list item in '" + text + "'");
    out.push_back(item);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

double parse_double(const std::string& text) {
  const std::string s = trim(text);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("not a number: '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& text) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("not a non-negative integer: '" + text + "'");
  }
  return v;
}

Config Config::parse(std::istream& in, const std::string& source) {
  Config c;
  c.source_ = source;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line) + ": expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line) + ": empty key");
    if (value.empty()) {
      throw ConfigError(source + ":" + std::to_string(line) + ": empty value for '" + key + "'");
    }
    if (c.entries_.count(key)) {
      throw ConfigError(source + ":" + std::to_string(line) + ": duplicate key '" + key +
                        "' (first set on line " + std::to_string(c.entries_[key].line) + ")");
    }
    c.entries_[key] = Entry{value, line};
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

void Config::set(const std::string& key, const std::string& value) {
  entries_[key] = Entry{value, 0};
}

const Config::Entry& Config::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
  return it->second;
}

void Config::fail(const std::string& key, const std::string& what) const {
  const std::size_t line = entry(key).line;
  const std::string where = line == 0 ? "command line" : source_ + ":" + std::to_string(line);
  throw ConfigError(where + ": key '" + key + "': " + what);
}

std::string Config::get(const std::string& key) const { return entry(key).value; }

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double Config::get_double(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const std::invalid_argument& e) {
    fail(key, e.what());
  }
}

std::uint64_t Config::get_u64(const std::string& key) const {
  try {
    return parse_u64(get(key));
  } catch (const std::invalid_argument& e) {
    fail(key, e.what());
  }
}

std::vector<std::string> Config::get_list(const std::string& key) const {
  try {
    return split_list(get(key));
  } catch (const std::invalid_argument& e) {
    fail(key, e.what());
  }
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  try {
    for (const auto& s : split_list(get(key))) out.push_back(parse_double(s));
  } catch (const std::invalid_argument& e) {
    fail(key, e.what());
  }
  return out;
}

std::vector<std::size_t> Config::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  try {
    for (const auto& s : split_list(get(key))) out.push_back(static_cast<std::size_t>(parse_u64(s)));
  } catch (const std::invalid_argument& e) {
    fail(key, e.what());
  }
  return out;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> k;
  for (const auto& [key, e] : entries_) k.push_back(key);
  return k;
}

void Config::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& [key, e] : entries_) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(key, "unknown key");
    }
  }
}

}  // namespace cbpf
