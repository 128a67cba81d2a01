#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "homlab/types.hpp"

namespace homlab::study {

/// Malformed or inconsistent configuration; names the key and line.
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& what, std::string key = {}, int line = 0)
      : InvalidArgument(what), key(std::move(key)), line(line) {}

  std::string key;
  int line;
};

using ConfigValue = std::variant<double, bool, std::string, std::vector<double>>;

/// Flat `dotted.key = value` file. Values are numbers, true/false, numeric
/// lists `[a, b, ...]`, quoted strings or bare words; `#` starts a comment.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& key) const;

  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const;

  /// Overrides (or adds) a value, as from a command-line flag.
  void set(const std::string& key, ConfigValue value);

  /// Throws ConfigError on the first key never read by a getter.
  void check_all_used() const;
  /// Marks a key as consumed without reading it.
  void touch(const std::string& key) const;

  /// Canonical `key = value` lines in file order, for provenance headers.
  std::vector<std::string> echo() const;

  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string key;
    ConfigValue value;
    int line = 0;
  };

  const Entry& entry(const std::string& key) const;
  [[noreturn]] void type_error(const Entry& e, const char* expected) const;

  std::string source_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  mutable std::set<std::string> used_;
};

std::string format_value(const ConfigValue& v);

}  // namespace homlab::study
