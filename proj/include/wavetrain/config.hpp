// SPDX-License-Identifier: Apache-2.0
//
// INI-style configuration: `[section]` headers, `key = value` lines, `#` or
// `;` comments. Keys are read through a Schema that records which entries
// were consumed, so unknown keys can be rejected with their line number.

#pragma once

#include "wavetrain/core.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace wavetrain::config {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct Entry {
  std::string value;
  int line = 0;
};

class Document {
 public:
  static Document parse(std::istream& in, const std::string& source = "<config>") {
    Document doc;
    doc.source_ = source;
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string text = trim(strip_comment(raw));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']') doc.fail(line, "unterminated section header");
        section = trim(text.substr(1, text.size() - 2));
        if (section.empty()) doc.fail(line, "empty section name");
        if (!doc.section_lines_.emplace(section, line).second) doc.fail(line, "duplicate section [" + section + "]");
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) doc.fail(line, "expected 'key = value'");
      if (section.empty()) doc.fail(line, "key outside of any section");
      const std::string key = trim(text.substr(0, eq));
      if (key.empty()) doc.fail(line, "missing key before '='");
      auto& keys = doc.entries_[section];
      if (keys.count(key)) doc.fail(line, "duplicate key '" + key + "' in [" + section + "]");
      keys[key] = Entry{trim(text.substr(eq + 1)), line};
    }
    return doc;
  }

  static Document parse_string(const std::string& text, const std::string& source = "<string>") {
    std::istringstream in(text);
    return parse(in, source);
  }

  static Document load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  [[nodiscard]] const std::string& source() const { return source_; }
  [[nodiscard]] const Entry* find(const std::string& section, const std::string& key) const {
    const auto s = entries_.find(section);
    if (s == entries_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }
  [[nodiscard]] bool has_section(const std::string& section) const { return section_lines_.count(section) != 0; }
  [[nodiscard]] const std::map<std::string, std::map<std::string, Entry>>& entries() const { return entries_; }
  [[nodiscard]] const std::map<std::string, int>& section_lines() const { return section_lines_; }

  /// Inserts or replaces a value (line 0 marks an override).
  void set(const std::string& section, const std::string& key, const std::string& value) {
    section_lines_.emplace(section, 0);
    entries_[section][key] = Entry{value, 0};
  }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

 private:
  static std::string strip_comment(const std::string& s) {
    const auto p = s.find_first_of("#;");
    return p == std::string::npos ? s : s.substr(0, p);
  }
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> entries_;
  std::map<std::string, int> section_lines_;
};

template <typename T>
std::optional<T> parse_value(const std::string& text);

template <>
inline std::optional<std::string> parse_value<std::string>(const std::string& text) {
  return text;
}

template <>
inline std::optional<double> parse_value<double>(const std::string& text) {
  // strtod accepts forms from_chars rejects on older toolchains (e.g. "1e-8")
  if (text.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

template <>
inline std::optional<long> parse_value<long>(const std::string& text) {
  long v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) return std::nullopt;
  return v;
}

template <>
inline std::optional<int> parse_value<int>(const std::string& text) {
  const auto v = parse_value<long>(text);
  if (!v || *v < std::numeric_limits<int>::min() || *v > std::numeric_limits<int>::max()) return std::nullopt;
  return int(*v);
}

template <>
inline std::optional<std::uint64_t> parse_value<std::uint64_t>(const std::string& text) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) return std::nullopt;
  return v;
}

template <>
inline std::optional<bool> parse_value<bool>(const std::string& text) {
  if (text == "true" || text == "yes" || text == "on" || text == "1") return true;
  if (text == "false" || text == "no" || text == "off" || text == "0") return false;
  return std::nullopt;
}

template <typename T>
constexpr const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_same_v<T, double>) return "a number";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else return "a string";
}

/// Typed, consumption-tracking view of a Document.
class Schema {
 public:
  explicit Schema(const Document& doc) : doc_(doc) {}

  template <typename T>
  std::optional<T> optional(const std::string& section, const std::string& key) {
    used_.insert({section, key});
    const Entry* e = doc_.find(section, key);
    if (!e) return std::nullopt;
    auto v = parse_value<T>(e->value);
    if (!v) doc_.fail(e->line, "[" + section + "] " + key + " must be " + type_name<T>() + ", got '" + e->value + "'");
    return v;
  }

  template <typename T>
  T get(const std::string& section, const std::string& key, T fallback) {
    auto v = optional<T>(section, key);
    return v ? *v : fallback;
  }

  template <typename T>
  T required(const std::string& section, const std::string& key) {
    auto v = optional<T>(section, key);
    if (!v) throw ConfigError(doc_.source() + ": missing required key '" + key + "' in [" + section + "]");
    return *v;
  }

  /// Value must be one of `choices`.
  std::optional<std::string> choice(const std::string& section, const std::string& key,
                                    const std::vector<std::string>& choices) {
    auto v = optional<std::string>(section, key);
    if (!v) return v;
    for (const auto& c : choices)
      if (*v == c) return v;
    std::string list;
    for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
    doc_.fail(doc_.find(section, key)->line, "[" + section + "] " + key + " must be one of {" + list + "}, got '" + *v + "'");
  }

  /// Raises the first problem in a range check at the key's line.
  void check(bool ok, const std::string& section, const std::string& key, const std::string& msg) const {
    if (ok) return;
    const Entry* e = doc_.find(section, key);
    if (e) doc_.fail(e->line, "[" + section + "] " + key + " " + msg);
    throw ConfigError(doc_.source() + ": [" + section + "] " + key + " " + msg);
  }

  /// Every entry and section must have been read by the schema.
  void reject_unknown() const {
    std::set<std::string> known_sections;
    for (const auto& [s, k] : used_) known_sections.insert(s);
    for (const auto& [section, line] : doc_.section_lines())
      if (!known_sections.count(section)) doc_.fail(line, "unknown section [" + section + "]");
    for (const auto& [section, keys] : doc_.entries())
      for (const auto& [key, entry] : keys)
        if (!used_.count({section, key})) doc_.fail(entry.line, "unknown key '" + key + "' in [" + section + "]");
  }

 private:
  const Document& doc_;
  std::set<std::pair<std::string, std::string>> used_;
};

}  // namespace wavetrain::config
