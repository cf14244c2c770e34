#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedga {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat experiment configuration. Values are kept as text; lists are
/// comma-separated. Files are either `key = value` lines ('#' starts a
/// comment) or a JSON object whose values are scalars or arrays of scalars.
class Config {
 public:
  static Config from_file(const std::filesystem::path& path);
  static Config from_text(const std::string& text);
  static Config from_json_text(const std::string& text);

  void set(const std::string& key, const std::string& value);
  /// Applies a `key=value` override.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  /// Rejects keys outside `known`, naming the first offender.
  void require_known(const std::set<std::string>& known) const;

  /// One `key=value` string per entry, sorted by key.
  std::vector<std::string> echo() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fedga
