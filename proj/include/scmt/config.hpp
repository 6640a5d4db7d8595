#pragma once

// Flat key=value config files. One assignment per line, '#' starts a
// comment, keys are dotted lowercase paths. Every run writes its fully
// resolved config back out in this format so a run directory is
// self-describing.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scmt/common.hpp"

namespace scmt {

class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(const std::string& text) {
    KvConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      size_t eq = s.find('=');
      SCMT_CONFIG_REQUIRE(eq != std::string::npos,
                          "config line " + std::to_string(line_no) + ": expected key=value, got '" +
                              s + "'");
      std::string key = strip(s.substr(0, eq));
      std::string value = strip(s.substr(eq + 1));
      SCMT_CONFIG_REQUIRE(!key.empty(),
                          "config line " + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("config: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse(os.str());
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("config: cannot write " + path);
    f << to_text();
    if (!f) throw IoError("config: short write to " + path);
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    values_[key] = os.str();
  }
  void set(const std::string& key, int64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    SCMT_CONFIG_REQUIRE(it != values_.end(), "config: missing key '" + key + "'");
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key) const { return parse_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(key, it->second);
  }

  int64_t get_int(const std::string& key) const { return parse_int(key, get_string(key)); }
  int64_t get_int(const std::string& key, int64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(key, it->second);
  }

  bool get_bool(const std::string& key) const { return parse_bool(key, get_string(key)); }
  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_bool(key, it->second);
  }

  // Keys not consumed by any reader; callers use this to reject typos.
  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  static std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double parse_double(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      double d = std::stod(v, &pos);
      SCMT_CONFIG_REQUIRE(pos == v.size(), "config: key '" + key + "' has trailing junk: '" + v + "'");
      return d;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not a number: '" + v + "'");
    }
  }

  static int64_t parse_int(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      long long i = std::stoll(v, &pos);
      SCMT_CONFIG_REQUIRE(pos == v.size(), "config: key '" + key + "' has trailing junk: '" + v + "'");
      return static_cast<int64_t>(i);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not an integer: '" + v + "'");
    }
  }

  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: '" + v + "'");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace scmt
