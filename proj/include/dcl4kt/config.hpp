#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dcl4kt {

/// Flat `key = value` configuration. Lines starting with '#' are comments.
/// Values are kept as strings and converted on access; every accessor takes
/// the default so a missing key never fails.
class Config {
 public:
  Config() = default;

  static Config load(const std::filesystem::path& path);
  static Config parse(std::string_view text);

  /// Applies one "key=value" override. Throws InputError on malformed input.
  void set(std::string_view assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::vector<double> parse_double_list(std::string_view text);

}  // namespace dcl4kt
