#pragma once

// Flat key=value configuration with dotted keys. Values are kept as strings
// and converted on access; precedence is handled by apply order (defaults,
// then file, then command-line --set overrides).

#include <cctype>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "monokd/common.hpp"

namespace monokd {

class KvConfig {
 public:
  static KvConfig from_text(const std::string& text) {
    KvConfig cfg;
    int line_no = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigInvalid("config line " + std::to_string(line_no) + ": expected key=value");
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigInvalid("config: empty key");
    values_[key] = value;
  }

  // "key=value" as passed to --set.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigInvalid("--set expects key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  void merge(const KvConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  std::string require(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw MissingKey(key);
    return it->second;
  }

  double num(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_num(key, it->second);
  }
  int integer(const std::string& key, int fallback) const {
    const double v = num(key, fallback);
    const int i = static_cast<int>(v);
    if (v != i) throw ConfigInvalid("config " + key + ": expected an integer");
    return i;
  }
  std::uint64_t uint(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (...) {
      throw ConfigInvalid("config " + key + ": expected an unsigned integer");
    }
  }
  bool flag(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigInvalid("config " + key + ": expected a boolean, got '" + v + "'");
  }
  std::vector<int> int_list(const std::string& key, std::vector<int> fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    if (trim(it->second).empty()) return out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ','))
      out.push_back(static_cast<int>(parse_num(key, trim(item))));
    return out;
  }

  // Sorted text form; feeds run manifests and config echo.
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
    return os.str();
  }

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }
  static double parse_num(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw MalformedNumber(0, 0);
      return d;
    } catch (...) {
      throw ConfigInvalid("config " + key + ": expected a number, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace monokd
