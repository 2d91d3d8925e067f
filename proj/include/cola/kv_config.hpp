#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cola {

/// One `[kind name]` block of a key-value file. Keys before the first header
/// land in a section with empty kind and name.
struct KvSection {
  std::string kind;
  std::string name;
  std::map<std::string, std::string> entries;

  bool has(const std::string& key) const { return entries.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  /// Comma-separated list, items trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<std::string> get_list_or(const std::string& key, std::vector<std::string> fallback) const;
};

/// Line-oriented `key = value` text with `[kind name]` section headers and
/// `#` comments. Duplicate keys within a section are a ParseError.
struct KvDocument {
  std::vector<KvSection> sections;

  const KvSection& globals() const { return sections.front(); }
  std::vector<const KvSection*> of_kind(std::string_view kind) const;
};

KvDocument parse_kv(std::string_view text);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

}  // namespace cola
