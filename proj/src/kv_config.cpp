#include "cola/kv_config.hpp"

#include <charconv>
#include <cstdlib>

#include "cola/error.hpp"

namespace cola {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<double> parse_double(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  const std::string t = trim(s);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

const std::string& KvSection::get(const std::string& key) const {
  const auto it = entries.find(key);
  if (it == entries.end()) {
    throw Error(ErrorCode::ParseError, "missing key '" + key + "' in [" + kind + " " + name + "]");
  }
  return it->second;
}

std::string KvSection::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = entries.find(key);
  return it == entries.end() ? fallback : it->second;
}

double KvSection::get_double(const std::string& key) const {
  const auto v = parse_double(get(key));
  if (!v) throw Error(ErrorCode::ParseError, "key '" + key + "' is not a number: " + get(key));
  return *v;
}

double KvSection::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t KvSection::get_int(const std::string& key) const {
  const auto v = parse_int(get(key));
  if (!v) throw Error(ErrorCode::ParseError, "key '" + key + "' is not an integer: " + get(key));
  return *v;
}

std::int64_t KvSection::get_int_or(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool KvSection::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::ParseError, "key '" + key + "' is not a boolean: " + v);
}

std::vector<std::string> KvSection::get_list(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& item : split(get(key), ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> KvSection::get_list_or(const std::string& key,
                                                std::vector<std::string> fallback) const {
  return has(key) ? get_list(key) : fallback;
}

std::vector<const KvSection*> KvDocument::of_kind(std::string_view kind) const {
  std::vector<const KvSection*> out;
  for (const auto& s : sections) {
    if (s.kind == kind) out.push_back(&s);
  }
  return out;
}

KvDocument parse_kv(std::string_view text) {
  KvDocument doc;
  doc.sections.emplace_back();
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = " (line " + std::to_string(line_no) + ")";
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::ParseError, "unterminated section header" + where);
      const std::string inner = trim(std::string_view(line).substr(1, line.size() - 2));
      KvSection section;
      const auto space = inner.find(' ');
      section.kind = trim(std::string_view(inner).substr(0, space));
      if (space != std::string::npos) section.name = trim(std::string_view(inner).substr(space + 1));
      if (section.kind.empty()) throw Error(ErrorCode::ParseError, "empty section header" + where);
      doc.sections.push_back(std::move(section));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "expected key = value" + where);
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::ParseError, "empty key" + where);
    auto& entries = doc.sections.back().entries;
    if (!entries.emplace(key, std::move(value)).second) {
      throw Error(ErrorCode::ParseError, "duplicate key '" + key + "'" + where);
    }
  }
  return doc;
}

}  // namespace cola
