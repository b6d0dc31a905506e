#include "semcom/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "semcom/error.hpp"

namespace semcom {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

double parse_real(std::string_view text, const std::string& what) {
  const std::string t = lower(trim(text));
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || std::isnan(v)) {
    throw Error(Errc::ConfigError, what + ": '" + std::string(text) + "' is not a number");
  }
  return v;
}

ConfigFile ConfigFile::parse(std::string_view text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const std::string at = origin + ":" + std::to_string(lineno);
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3) throw Error(Errc::ConfigError, at + ": malformed section header");
      section = lower(trim(body.substr(1, body.size() - 2)));
      cfg.data_[section];
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigError, at + ": expected key = value");
    if (section.empty()) throw Error(Errc::ConfigError, at + ": key outside any section");
    const std::string key = lower(trim(body.substr(0, eq)));
    if (key.empty()) throw Error(Errc::ConfigError, at + ": empty key");
    auto& sec = cfg.data_[section];
    if (sec.count(key)) throw Error(Errc::ConfigError, at + ": duplicate key " + section + "." + key);
    sec[key] = trim(body.substr(eq + 1));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::ConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

bool ConfigFile::has(const std::string& section, const std::string& key) const { return raw(section, key).has_value(); }

std::optional<std::string> ConfigFile::raw(const std::string& section, const std::string& key) const {
  const auto s = data_.find(section);
  if (s == data_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void ConfigFile::set(const std::string& section, const std::string& key, const std::string& value) {
  data_[section][key] = value;
}

std::string ConfigFile::where(const std::string& section, const std::string& key) const {
  return origin_ + ": " + section + "." + key;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  return raw(section, key).value_or(fallback);
}

double ConfigFile::get_double(const std::string& section, const std::string& key, double fallback) const {
  const auto v = raw(section, key);
  return v ? parse_real(*v, where(section, key)) : fallback;
}

int ConfigFile::get_int(const std::string& section, const std::string& key, int fallback) const {
  const auto v = raw(section, key);
  if (!v) return fallback;
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (v->empty() || ec != std::errc() || ptr != v->data() + v->size()) {
    throw Error(Errc::ConfigError, where(section, key) + ": '" + *v + "' is not an integer");
  }
  return out;
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const {
  const auto v = raw(section, key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (v->empty() || ec != std::errc() || ptr != v->data() + v->size()) {
    throw Error(Errc::ConfigError, where(section, key) + ": '" + *v + "' is not an unsigned integer");
  }
  return out;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  const auto v = raw(section, key);
  if (!v) return fallback;
  const std::string t = lower(*v);
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw Error(Errc::ConfigError, where(section, key) + ": '" + *v + "' is not a boolean");
}

std::vector<std::string> ConfigFile::get_list(const std::string& section, const std::string& key,
                                              std::vector<std::string> fallback) const {
  const auto v = raw(section, key);
  if (!v) return fallback;
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(*v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> ConfigFile::get_doubles(const std::string& section, const std::string& key,
                                            std::vector<double> fallback) const {
  if (!has(section, key)) return fallback;
  std::vector<double> out;
  for (const auto& item : get_list(section, key, {})) out.push_back(parse_real(item, where(section, key)));
  return out;
}

void ConfigFile::require_known(const std::map<std::string, std::set<std::string>>& known) const {
  for (const auto& [section, keys] : data_) {
    const auto s = known.find(section);
    if (s == known.end()) throw Error(Errc::ConfigError, origin_ + ": unknown section [" + section + "]");
    for (const auto& [key, value] : keys) {
      if (!s->second.count(key)) throw Error(Errc::ConfigError, where(section, key) + ": unknown key");
    }
  }
}

}  // namespace semcom
