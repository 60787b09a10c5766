// Copyright 2026 The mflab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MFLAB_CONFIG_HPP
#define MFLAB_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mflab {

// Plain-text key=value store. '#' starts a comment, blank lines are skipped,
// later keys override earlier ones.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string &text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": expected key=value, got '" + line + "'");
      auto key = trim(line.substr(0, eq));
      if (key.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string &key) const { return values_.count(key) != 0; }

  void set(const std::string &key, const std::string &value) {
    values_[key] = value;
  }

  std::string get_string(const std::string &key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::invalid_argument("missing config key: " + key);
    return it->second;
  }

  std::string get_string(const std::string &key, const std::string &fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string &key) const {
    return to_double(key, get_string(key));
  }

  double get_double(const std::string &key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long get_int(const std::string &key) const {
    const auto s = get_string(key);
    long out = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw std::invalid_argument("config key " + key + ": not an integer: '" + s + "'");
    return out;
  }

  long get_int(const std::string &key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  bool get_bool(const std::string &key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto s = get_string(key);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw std::invalid_argument("config key " + key + ": not a boolean: '" + s + "'");
  }

  // Comma- or whitespace-separated list of reals.
  std::vector<double> get_doubles(const std::string &key) const {
    std::vector<double> out;
    std::string s = get_string(key);
    for (auto &c : s)
      if (c == ',') c = ' ';
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(to_double(key, tok));
    return out;
  }

  std::vector<double> get_doubles(const std::string &key,
                                  const std::vector<double> &fallback) const {
    return has(key) ? get_doubles(key) : fallback;
  }

  const std::map<std::string, std::string> &entries() const { return values_; }

  // Canonical serialization: sorted keys, one per line.
  std::string canonical() const {
    std::string out;
    for (const auto &[k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string &key, const std::string &s) {
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception &) {
      throw std::invalid_argument("config key " + key + ": not a number: '" + s + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

// 64-bit FNV-1a, used for config fingerprints in reports.
inline std::uint64_t fnv1a64(const std::string &data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mflab

#endif  // MFLAB_CONFIG_HPP
