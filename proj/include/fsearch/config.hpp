#pragma once

// Reader for the small TOML subset used by run configs:
//   # comment
//   [section]
//   key = "string" | 123 | 1.5e-3 | true | false
// Keys outside any section live in the "" section.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>

#include "util.hpp"

namespace fsearch {

class Config {
 public:
  using Value = std::variant<std::string, std::int64_t, double, bool>;

  static Config parse(std::string_view text, const std::string& origin = "<config>") {
    Config cfg;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string line = trim(strip_comment(raw));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw Error(ErrorCode::ConfigError, origin + ":" + std::to_string(line_no),
                      "unterminated section header");
        section = trim(std::string_view(line).substr(1, line.size() - 2));
        cfg.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorCode::ConfigError, origin + ":" + std::to_string(line_no),
                    "expected key = value");
      std::string key = trim(std::string_view(line).substr(0, eq));
      std::string val = trim(std::string_view(line).substr(eq + 1));
      if (key.empty() || val.empty())
        throw Error(ErrorCode::ConfigError, origin + ":" + std::to_string(line_no),
                    "empty key or value");
      cfg.sections_[section][key] = parse_value(val, origin, line_no);
    }
    return cfg;
  }

  static Config load(const std::string& path) { return parse(read_file(path), path); }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         std::optional<std::string> fallback = std::nullopt) const {
    if (auto v = find(section, key)) {
      if (auto* s = std::get_if<std::string>(v)) return *s;
      type_error(section, key, "string");
    }
    return require(fallback, section, key);
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::optional<std::int64_t> fallback = std::nullopt) const {
    if (auto v = find(section, key)) {
      if (auto* i = std::get_if<std::int64_t>(v)) return *i;
      type_error(section, key, "integer");
    }
    return require(fallback, section, key);
  }

  double get_double(const std::string& section, const std::string& key,
                    std::optional<double> fallback = std::nullopt) const {
    if (auto v = find(section, key)) {
      if (auto* d = std::get_if<double>(v)) return *d;
      if (auto* i = std::get_if<std::int64_t>(v)) return static_cast<double>(*i);
      type_error(section, key, "number");
    }
    return require(fallback, section, key);
  }

  bool get_bool(const std::string& section, const std::string& key,
                std::optional<bool> fallback = std::nullopt) const {
    if (auto v = find(section, key)) {
      if (auto* b = std::get_if<bool>(v)) return *b;
      type_error(section, key, "boolean");
    }
    return require(fallback, section, key);
  }

  void set(const std::string& section, const std::string& key, Value v) {
    sections_[section][key] = std::move(v);
  }

  /// Canonical serialization (sorted sections and keys); hashed into run metadata.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& [name, kv] : sections_) {
      if (!name.empty()) os << "[" << name << "]\n";
      for (const auto& [k, v] : kv) os << k << " = " << render(v) << "\n";
    }
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a64(dump()); }

 private:
  static std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
      if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
  }

  static Value parse_value(const std::string& v, const std::string& origin,
                           std::size_t line_no) {
    if (v.front() == '"') {
      if (v.size() < 2 || v.back() != '"')
        throw Error(ErrorCode::ConfigError, origin + ":" + std::to_string(line_no),
                    "unterminated string");
      std::string out;
      for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '\\' && i + 2 < v.size()) {
          const char n = v[++i];
          out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
        } else {
          out += v[i];
        }
      }
      return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    const bool floaty = v.find_first_of(".eE") != std::string::npos &&
                        v.find("0x") == std::string::npos;
    try {
      std::size_t used = 0;
      if (floaty) {
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
      } else {
        std::int64_t i = std::stoll(v, &used);
        if (used == v.size()) return i;
      }
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ConfigError, origin + ":" + std::to_string(line_no),
                "cannot parse value '" + v + "'");
  }

  static std::string render(const Value& v) {
    if (auto* s = std::get_if<std::string>(&v)) {
      std::string out = "\"";
      for (char c : *s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
          out += "\\n";
          continue;
        }
        out += c;
      }
      return out + "\"";
    }
    if (auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
    if (auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
    std::ostringstream os;
    os << std::setprecision(17) << std::get<double>(v);
    std::string s = os.str();
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  }

  const Value* find(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  template <typename T>
  static T require(const std::optional<T>& fallback, const std::string& section,
                   const std::string& key) {
    if (!fallback)
      throw Error(ErrorCode::ConfigError, section + "." + key, "missing required key");
    return *fallback;
  }

  [[noreturn]] static void type_error(const std::string& section, const std::string& key,
                                      const char* want) {
    throw Error(ErrorCode::ConfigError, section + "." + key, std::string("expected ") + want);
  }

  std::map<std::string, std::map<std::string, Value>> sections_;
};

}  // namespace fsearch
