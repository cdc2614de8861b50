#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace xmar {

// "key = value" per line. Blank lines and lines starting with '#' are
// skipped; " #" after a value starts a trailing comment. Keys are unique.
class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text, const std::string& source = "<config>");
  static FlatConfig load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, std::string value);

  // Missing keys raise ConfigError naming the key; so do malformed values.
  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::optional<double> get_double_opt(const std::string& key) const;
  std::optional<std::int64_t> get_int_opt(const std::string& key) const;
  // Comma-separated integers.
  std::vector<std::int64_t> get_int_list_or(const std::string& key, std::vector<std::int64_t> fallback) const;

  // ConfigError for the first key not in `known`, with its line number.
  void reject_unknown(const std::set<std::string>& known) const;

  const std::string& source() const { return source_; }
  nlohmann::json to_json() const;
  std::string to_text() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::string where(const std::string& key) const;

  std::map<std::string, Entry> entries_;
  std::string source_;
};

}  // namespace xmar
