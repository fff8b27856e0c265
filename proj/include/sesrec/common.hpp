#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sesrec {

// Error taxonomy. The CLI maps ConfigError -> exit 2, DataError -> exit 3.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64, used to derive independent sub-seeds from one master seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t master, uint64_t salt = 0) {
  return Rng(splitmix64(master ^ splitmix64(salt)));
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Flat key=value file. '#' starts a comment, blank lines ignored.
inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = val;
  }
  return kv;
}

// Typed accessor over a parsed key=value map that tracks which keys were
// consumed, so unrecognized keys can be reported as config errors.
class KvReader {
 public:
  explicit KvReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& dflt) {
    used_.insert({key, true});
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  int64_t get_int(const std::string& key, int64_t dflt) {
    auto s = get_str(key, "");
    if (s.empty()) return dflt;
    try {
      size_t pos = 0;
      int64_t v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': not an integer: " + s);
    }
  }
  double get_double(const std::string& key, double dflt) {
    auto s = get_str(key, "");
    if (s.empty()) return dflt;
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': not a number: " + s);
    }
  }
  bool get_bool(const std::string& key, bool dflt) {
    auto s = get_str(key, "");
    if (s.empty()) return dflt;
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("key '" + key + "': not a boolean: " + s);
  }

  // Throws if the file contains keys no reader asked about (likely typos).
  void check_unused() const {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) throw ConfigError("unknown config key: " + k);
  }

 private:
  std::map<std::string, std::string> kv_;
  std::map<std::string, bool> used_;
};

// FNV-1a over a canonical string rendering; stable across platforms, used to
// stamp checkpoints with the config they were trained under.
inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sesrec
