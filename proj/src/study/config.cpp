#include "homlab/study/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace homlab::study {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_key(std::string_view key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  bool segment_start = true;
  for (char c : key) {
    if (c == '.') {
      if (segment_start) return false;
      segment_start = true;
      continue;
    }
    const bool lower = (c >= 'a' && c <= 'z') || c == '_';
    const bool digit = c >= '0' && c <= '9';
    if (segment_start && !lower) return false;
    if (!lower && !digit) return false;
    segment_start = false;
  }
  return true;
}

bool parse_number(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Strips a trailing comment outside quotes.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

ConfigValue parse_value(std::string_view raw, const std::string& key, int line, const std::string& where) {
  const std::string_view s = trim(raw);
  auto fail = [&](const std::string& msg) -> ConfigError {
    return ConfigError(fmt::format("{}:{}: key '{}': {}", where, line, key, msg), key, line);
  };
  if (s.empty()) throw fail("missing value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw fail("unterminated string");
    return std::string(s.substr(1, s.size() - 2));
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw fail("unterminated list");
    std::vector<double> out;
    std::string_view body = trim(s.substr(1, s.size() - 2));
    while (!body.empty()) {
      const std::size_t comma = body.find(',');
      const std::string_view item = trim(body.substr(0, comma));
      double v = 0.0;
      if (!parse_number(item, v)) throw fail(fmt::format("list entry '{}' is not a number", item));
      out.push_back(v);
      if (comma == std::string_view::npos) break;
      body = trim(body.substr(comma + 1));
      if (body.empty()) throw fail("trailing comma in list");
    }
    return out;
  }
  if (s == "true") return true;
  if (s == "false") return false;
  double v = 0.0;
  if (parse_number(s, v)) return v;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == '/')) {
      throw fail(fmt::format("cannot parse value '{}' (quote strings containing '{}')", s, c));
    }
  }
  return std::string(s);
}

}  // namespace

std::string format_value(const ConfigValue& v) {
  struct Visitor {
    std::string operator()(double d) const { return fmt::format("{}", d); }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(const std::string& s) const { return fmt::format("\"{}\"", s); }
    std::string operator()(const std::vector<double>& l) const { return fmt::format("[{}]", fmt::join(l, ", ")); }
  };
  return std::visit(Visitor{}, v);
}

Config Config::parse(std::string_view text, const std::string& source) {
  Config c;
  c.source_ = source;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", source, line_no, line), {}, line_no);
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!valid_key(key)) {
      throw ConfigError(fmt::format("{}:{}: malformed key '{}' (lowercase dotted identifiers only)", source, line_no, key),
                        key, line_no);
    }
    if (c.index_.count(key)) {
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", source, line_no, key), key, line_no);
    }
    c.index_[key] = c.entries_.size();
    c.entries_.push_back({key, parse_value(line.substr(eq + 1), key, line_no, source), line_no});
    if (end == text.size()) break;
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

bool Config::has(const std::string& key) const { return index_.count(key) > 0; }

const Config::Entry& Config::entry(const std::string& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) throw ConfigError(fmt::format("{}: missing required key '{}'", source_, key), key);
  used_.insert(key);
  return entries_[it->second];
}

void Config::type_error(const Entry& e, const char* expected) const {
  throw ConfigError(fmt::format("{}:{}: key '{}': expected {}, got {}", source_, e.line, e.key, expected,
                                format_value(e.value)),
                    e.key, e.line);
}

double Config::number(const std::string& key) const {
  const Entry& e = entry(key);
  if (const double* v = std::get_if<double>(&e.value)) return *v;
  type_error(e, "a number");
}

double Config::number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

int Config::integer(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const Entry& e = entry(key);
  const double* v = std::get_if<double>(&e.value);
  if (!v || *v != static_cast<double>(static_cast<long long>(*v)) || std::abs(*v) > 2e9) type_error(e, "an integer");
  return static_cast<int>(*v);
}

bool Config::boolean(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const Entry& e = entry(key);
  if (const bool* v = std::get_if<bool>(&e.value)) return *v;
  type_error(e, "true or false");
}

std::string Config::string(const std::string& key) const {
  const Entry& e = entry(key);
  if (const std::string* v = std::get_if<std::string>(&e.value)) return *v;
  type_error(e, "a string");
}

std::string Config::string(const std::string& key, const std::string& fallback) const {
  return has(key) ? string(key) : fallback;
}

std::vector<double> Config::numbers(const std::string& key) const {
  const Entry& e = entry(key);
  if (const auto* v = std::get_if<std::vector<double>>(&e.value)) return *v;
  if (const double* v = std::get_if<double>(&e.value)) return {*v};
  type_error(e, "a list of numbers");
}

std::vector<double> Config::numbers(const std::string& key, const std::vector<double>& fallback) const {
  return has(key) ? numbers(key) : fallback;
}

void Config::set(const std::string& key, ConfigValue value) {
  if (!valid_key(key)) throw ConfigError("malformed key '" + key + "'", key);
  const auto it = index_.find(key);
  if (it != index_.end()) {
    entries_[it->second].value = std::move(value);
    return;
  }
  index_[key] = entries_.size();
  entries_.push_back({key, std::move(value), 0});
}

void Config::touch(const std::string& key) const { used_.insert(key); }

void Config::check_all_used() const {
  for (const auto& e : entries_) {
    if (!used_.count(e.key)) {
      throw ConfigError(fmt::format("{}:{}: unknown key '{}'", source_, e.line, e.key), e.key, e.line);
    }
  }
}

std::vector<std::string> Config::echo() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.key + " = " + format_value(e.value));
  return out;
}

}  // namespace homlab::study
