#pragma once

// Flat "key = value" text with [section] headers. '#' and ';' start comments.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace semcom {

class ConfigFile {
 public:
  /// Throws ConfigError with the offending line number.
  static ConfigFile parse(std::string_view text, const std::string& origin = "<config>");
  /// Throws ConfigError when the file cannot be read.
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> raw(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  /// Comma-separated list; "inf" parses as +infinity.
  std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                  std::vector<double> fallback) const;
  std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                    std::vector<std::string> fallback) const;

  /// Throws ConfigError naming the first section or key outside `known`.
  void require_known(const std::map<std::string, std::set<std::string>>& known) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const noexcept { return data_; }
  const std::string& origin() const noexcept { return origin_; }

 private:
  std::string where(const std::string& section, const std::string& key) const;

  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> data_;
};

/// Parses a real number, accepting "inf" / "-inf"; throws ConfigError.
double parse_real(std::string_view text, const std::string& what);

}  // namespace semcom
