#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cadr {

/// Flat key=value configuration. One pair per line, '#' starts a comment.
/// Values are kept as strings and converted on access.
class KeyValueConfig {
public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  /// Applies a `key=value` or `--key=value` override.
  void apply_override(std::string_view arg);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws ConfigError naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

  std::string to_string() const;

private:
  std::map<std::string, std::string> values_;
};

/// A `[run <name>]` section of a manifest file.
struct ConfigSection {
  std::string name;
  KeyValueConfig values;
};

/// Manifest grammar: global key=value pairs followed by `[run <name>]` sections.
struct SectionedConfig {
  KeyValueConfig global;
  std::vector<ConfigSection> sections;

  static SectionedConfig parse(std::string_view text, const std::string& source = "<string>");
  static SectionedConfig load(const std::filesystem::path& path);
};

}  // namespace cadr
