#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odelab/netcore/errors.hpp"

namespace odelab::cli {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;  // 0: default or command-line override
};

struct ConfigSection {
  std::string name;
  std::vector<ConfigEntry> entries;
  int line = 0;

  const ConfigEntry* find(const std::string& key) const {
    for (const ConfigEntry& e : entries) {
      if (e.key == key) return &e;
    }
    return nullptr;
  }
};

/// `[section]` headers followed by `key = value` lines; `#` and `;` start
/// comment lines.
class ConfigDocument {
 public:
  static ConfigDocument parse(const std::string& text, const std::string& origin = "config") {
    ConfigDocument doc;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    ConfigSection* cur = nullptr;
    while (std::getline(in, raw)) {
      ++line;
      const std::string s = trim(raw);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      const std::string where = origin + ", line " + std::to_string(line);
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(where + ": malformed section header '" + s + "'");
        const std::string name = trim(std::string_view(s).substr(1, s.size() - 2));
        if (name.empty()) throw ConfigError(where + ": empty section name");
        if (doc.find(name)) throw ConfigError(where + ": duplicate section [" + name + "]");
        doc.sections_.push_back({name, {}, line});
        cur = &doc.sections_.back();
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + s + "'");
      if (!cur) throw ConfigError(where + ": key outside of any section");
      const std::string key = trim(std::string_view(s).substr(0, eq));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (cur->find(key)) throw ConfigError(where + ": duplicate key '" + key + "' in [" + cur->name + "]");
      cur->entries.push_back({key, trim(std::string_view(s).substr(eq + 1)), line});
    }
    return doc;
  }

  static ConfigDocument load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  const std::vector<ConfigSection>& sections() const { return sections_; }

  const ConfigSection* find(const std::string& name) const {
    for (const ConfigSection& s : sections_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  ConfigSection& section(const std::string& name) {
    for (ConfigSection& s : sections_) {
      if (s.name == name) return s;
    }
    sections_.push_back({name, {}, 0});
    return sections_.back();
  }

  void set(const std::string& sec, const std::string& key, const std::string& value, int line = 0) {
    ConfigSection& s = section(sec);
    for (ConfigEntry& e : s.entries) {
      if (e.key == key) {
        e.value = value;
        e.line = line;
        return;
      }
    }
    s.entries.push_back({key, value, line});
  }

  /// `section.key=value`; the section is everything before the last dot.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    const std::string lhs = trim(std::string_view(assignment).substr(0, eq));
    const auto dot = lhs.rfind('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == lhs.size()) {
      throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    }
    set(lhs.substr(0, dot), lhs.substr(dot + 1), trim(std::string_view(assignment).substr(eq + 1)));
  }

  std::string dump() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < sections_.size(); ++i) {
      if (i) os << '\n';
      os << '[' << sections_[i].name << "]\n";
      for (const ConfigEntry& e : sections_[i].entries) os << e.key << " = " << e.value << '\n';
    }
    return os.str();
  }

  friend bool operator==(const ConfigDocument& a, const ConfigDocument& b) { return a.dump() == b.dump(); }

 private:
  std::vector<ConfigSection> sections_;
};

/// Allowed keys and defaults for one kind of section.
struct SectionSchema {
  std::string name;  // exact name, or a prefix when `prefixed` is set
  bool prefixed = false;
  std::vector<std::pair<std::string, std::string>> keys;

  bool matches(const std::string& section) const {
    if (!prefixed) return section == name;
    return section == name || (section.rfind(name + ".", 0) == 0 && section.size() > name.size() + 1);
  }
};

inline std::string describe(const ConfigSection& s, const ConfigEntry& e) {
  std::string where = e.line > 0 ? "line " + std::to_string(e.line) : "command-line override";
  return "key '" + e.key + "' in [" + s.name + "] (" + where + ")";
}

/// Rejects unknown sections and keys, then fills every missing key with its
/// default, in schema order.
inline ConfigDocument resolve(const ConfigDocument& doc, const std::vector<SectionSchema>& schemas) {
  ConfigDocument out;
  for (const ConfigSection& s : doc.sections()) {
    const auto it = std::find_if(schemas.begin(), schemas.end(), [&](const SectionSchema& sc) { return sc.matches(s.name); });
    if (it == schemas.end()) {
      throw ConfigError("unknown section [" + s.name + "]" + (s.line ? " at line " + std::to_string(s.line) : ""));
    }
    for (const ConfigEntry& e : s.entries) {
      const bool known = std::any_of(it->keys.begin(), it->keys.end(), [&](const auto& k) { return k.first == e.key; });
      if (!known) throw ConfigError("unknown " + describe(s, e));
    }
    ConfigSection& r = out.section(s.name);
    r.line = s.line;
    for (const auto& [key, def] : it->keys) {
      const ConfigEntry* e = s.find(key);
      r.entries.push_back(e ? *e : ConfigEntry{key, def, 0});
    }
  }
  return out;
}

/// Typed access to a resolved section with errors naming the key and line.
class SectionView {
 public:
  SectionView(const ConfigSection& s) : s_(&s) {}

  const std::string& name() const { return s_->name; }

  const std::string& str(const std::string& key) const { return entry(key).value; }

  double number(const std::string& key) const { return parse_double(entry(key)); }

  long integer(const std::string& key) const {
    const ConfigEntry& e = entry(key);
    long v = 0;
    const auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (ec != std::errc() || p != e.value.data() + e.value.size()) fail(e, "an integer");
    return v;
  }

  std::uint64_t u64(const std::string& key) const {
    const ConfigEntry& e = entry(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (ec != std::errc() || p != e.value.data() + e.value.size()) fail(e, "an unsigned integer");
    return v;
  }

  bool flag(const std::string& key) const {
    const ConfigEntry& e = entry(key);
    if (e.value == "true") return true;
    if (e.value == "false") return false;
    fail(e, "true or false");
  }

  std::vector<double> numbers(const std::string& key) const {
    const ConfigEntry& e = entry(key);
    std::vector<double> out;
    for (const std::string& item : split_list(e.value)) out.push_back(parse_double({e.key, item, e.line}));
    return out;
  }

  std::vector<std::string> words(const std::string& key) const { return split_list(entry(key).value); }

  /// Wraps a conversion so that its error names this key.
  template <class Fn>
  auto checked(const std::string& key, Fn&& fn) const -> decltype(fn(std::string{})) {
    const ConfigEntry& e = entry(key);
    try {
      return fn(e.value);
    } catch (const Error& err) {
      throw ConfigError(describe(*s_, e) + ": " + err.what());
    }
  }

 private:
  const ConfigEntry& entry(const std::string& key) const {
    const ConfigEntry* e = s_->find(key);
    if (!e) throw ConfigError("missing key '" + key + "' in [" + s_->name + "]");
    return *e;
  }

  double parse_double(const ConfigEntry& e) const {
    const std::string& v = e.value;
    if (v == "inf") return std::numeric_limits<double>::infinity();
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) fail(e, "a finite number");
    return out;
  }

  [[noreturn]] void fail(const ConfigEntry& e, const std::string& expected) const {
    throw ConfigError(describe(*s_, e) + ": expected " + expected + ", got '" + e.value + "'");
  }

  const ConfigSection* s_;
};

}  // namespace odelab::cli
