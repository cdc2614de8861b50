#include "xmar/flat_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "xmar/error.hpp"

namespace xmar {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

FlatConfig FlatConfig::parse(const std::string& text, const std::string& source) {
  FlatConfig cfg;
  cfg.source_ = source;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    for (std::size_t i = 1; i < line.size(); ++i) {
      if (line[i] == '#' && (line[i - 1] == ' ' || line[i - 1] == '\t')) {
        line = trim(line.substr(0, i));
        break;
      }
    }
    const auto eq = line.find('=');
    const std::string at = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(at + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(at + "empty key");
    if (cfg.entries_.count(key)) {
      throw ConfigError(at + "key '" + key + "' repeats line " + std::to_string(cfg.entries_[key].line));
    }
    cfg.entries_[key] = {value, lineno};
  }
  return cfg;
}

FlatConfig FlatConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void FlatConfig::set(const std::string& key, std::string value) { entries_[key] = {std::move(value), 0}; }

std::string FlatConfig::where(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end() || it->second.line == 0) return source_ + ": ";
  return source_ + ":" + std::to_string(it->second.line) + ": ";
}

std::string FlatConfig::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(source_ + ": missing required key '" + key + "'");
  return it->second.value;
}

std::string FlatConfig::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

std::int64_t FlatConfig::get_int(const std::string& key) const {
  const std::string v = get(key);
  std::int64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError(where(key) + "key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

std::int64_t FlatConfig::get_int_or(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double FlatConfig::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(where(key) + "key '" + key + "' expects a number, got '" + v + "'");
}

double FlatConfig::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool FlatConfig::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where(key) + "key '" + key + "' expects true or false, got '" + v + "'");
}

std::optional<double> FlatConfig::get_double_opt(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return get_double(key);
}

std::optional<std::int64_t> FlatConfig::get_int_opt(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return get_int(key);
}

std::vector<std::int64_t> FlatConfig::get_int_list_or(const std::string& key,
                                                      std::vector<std::int64_t> fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::int64_t> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::int64_t v = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || end != item.data() + item.size()) {
      throw ConfigError(where(key) + "key '" + key + "' expects comma-separated integers, got '" + get(key) + "'");
    }
    out.push_back(v);
  }
  return out;
}

void FlatConfig::reject_unknown(const std::set<std::string>& known) const {
  for (const auto& [key, entry] : entries_) {
    if (!known.count(key)) throw ConfigError(where(key) + "unknown key '" + key + "'");
  }
}

nlohmann::json FlatConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, entry] : entries_) j[key] = entry.value;
  return j;
}

std::string FlatConfig::to_text() const {
  std::string out;
  for (const auto& [key, entry] : entries_) out += key + " = " + entry.value + "\n";
  return out;
}

}  // namespace xmar
