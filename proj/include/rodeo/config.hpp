#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rodeo {

/// Flat key/value configuration read from an INI-style text file.
///
///     # comment
///     seed = 3
///     [attack]
///     steps = 200
///
/// Keys inside a `[section]` are stored as `section.key`. Later assignments
/// overwrite earlier ones. Values are kept as text and converted on access.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text, const std::string& origin = "<string>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const;

  /// Keys under `prefix.` with the prefix stripped.
  Config section(const std::string& prefix) const;

  /// Canonical `key = value` listing, sorted by key.
  std::string serialize() const;
  /// FNV-1a over serialize(), as 16 hex digits.
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// Parses numeric literals, accepting simple fractions such as `8/255`.
double parse_number(std::string_view text);

std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace rodeo
