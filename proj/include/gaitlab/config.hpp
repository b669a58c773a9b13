#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gaitlab/error.hpp"

namespace gaitlab {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, delim)) out.push_back(cur);
  if (!s.empty() && s.back() == delim) out.emplace_back();
  return out;
}

/// Shortest decimal form that round-trips to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/**
 * Flat `key = value` configuration. Blank lines and lines starting with '#'
 * are ignored; keys are unique. Rendering is sorted by key so the text form is
 * canonical.
 */
class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig parse(const std::string& text) {
    FlatConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorKind::config,
              "line " + std::to_string(lineno) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      require(!key.empty(), ErrorKind::config, "line " + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static FlatConfig load(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path + "'");
    out << render();
    require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + path + "'");
  }

  std::string render() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void erase(const std::string& key) { values_.erase(key); }

  /// Keys present but never read through a getter.
  std::vector<std::string> unread() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!read_.count(k)) out.push_back(k);
    return out;
  }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, double value) { values_[key] = format_real(value); }
  void set(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, int value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

  /// Apply a `key=value` override.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::config,
            "override must be key=value, got '" + kv + "'");
    values_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }

  void merge(const FlatConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    read_.insert(key);
    if (!has(key)) values_[key] = fallback;
    return values_.at(key);
  }

  double get_real(const std::string& key, double fallback) {
    read_.insert(key);
    if (!has(key)) set(key, fallback);
    const std::string& s = values_.at(key);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && p == s.data() + s.size(), ErrorKind::config,
            "key '" + key + "' expects a real number, got '" + s + "'");
    return v;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) {
    read_.insert(key);
    if (!has(key)) set(key, fallback);
    const std::string& s = values_.at(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && p == s.data() + s.size(), ErrorKind::config,
            "key '" + key + "' expects a non-negative integer, got '" + s + "'");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) {
    read_.insert(key);
    if (!has(key)) set(key, fallback);
    const std::string& s = values_.at(key);
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw Error(ErrorKind::config, "key '" + key + "' expects a boolean, got '" + s + "'");
  }

  /// Comma-separated list of non-negative integers.
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) {
    read_.insert(key);
    if (!has(key)) {
      std::string s;
      for (std::size_t i = 0; i < fallback.size(); ++i)
        s += (i ? "," : "") + std::to_string(fallback[i]);
      values_[key] = s;
    }
    std::vector<std::size_t> out;
    const std::string s = values_.at(key);
    if (trim(s).empty()) return out;
    for (const auto& part : split(s, ',')) {
      const std::string t = trim(part);
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      require(ec == std::errc{} && p == t.data() + t.size(), ErrorKind::config,
              "key '" + key + "' expects a comma-separated integer list, got '" + s + "'");
      out.push_back(v);
    }
    return out;
  }

  std::vector<double> get_reals(const std::string& key, const std::vector<double>& fallback) {
    read_.insert(key);
    if (!has(key)) {
      std::string s;
      for (std::size_t i = 0; i < fallback.size(); ++i) s += (i ? "," : "") + format_real(fallback[i]);
      values_[key] = s;
    }
    std::vector<double> out;
    const std::string s = values_.at(key);
    if (trim(s).empty()) return out;
    for (const auto& part : split(s, ',')) {
      const std::string t = trim(part);
      double v = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      require(ec == std::errc{} && p == t.data() + t.size(), ErrorKind::config,
              "key '" + key + "' expects a comma-separated real list, got '" + s + "'");
      out.push_back(v);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> read_;
};

}  // namespace gaitlab
