#include "cadr/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cadr/errors.hpp"

namespace cadr {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Splits `key=value`; returns false for blank and comment-only lines.
bool parse_pair(std::string_view raw, const std::string& source, std::size_t line_no,
                std::string& key, std::string& value) {
  auto line = raw;
  if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return false;
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                      std::string(line) + "'");
  }
  key = std::string(trim(line.substr(0, eq)));
  value = std::string(trim(line.substr(eq + 1)));
  if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
  return true;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value for '" + key + "': '" + text + "'");
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& source) {
  KeyValueConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    ++line_no;
    std::string key, value;
    if (parse_pair(line, source, line_no, key, value)) cfg.values_[key] = value;
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

void KeyValueConfig::apply_override(std::string_view arg) {
  if (arg.starts_with("--")) arg.remove_prefix(2);
  const auto eq = arg.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override must look like --key=value: '" + std::string(arg) + "'");
  }
  values_[std::string(arg.substr(0, eq))] = std::string(arg.substr(eq + 1));
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  // from_chars for double is available in libstdc++ 11, but accept a leading '+' too.
  std::string text = it->second;
  if (!text.empty() && text.front() == '+') text.erase(0, 1);
  return parse_number<double>(key, text);
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<std::int64_t>(key, it->second);
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<std::uint64_t>(key, it->second);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean for '" + key + "': '" + v + "'");
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [key, value] : values_) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + "=" + value + "\n";
  return out;
}

SectionedConfig SectionedConfig::parse(std::string_view text, const std::string& source) {
  SectionedConfig out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::set<std::string> names;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    ++line_no;
    const auto stripped = trim(line.substr(0, line.find('#')));
    if (stripped.starts_with('[')) {
      if (!stripped.ends_with(']')) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": unterminated section header");
      }
      const auto inner = trim(stripped.substr(1, stripped.size() - 2));
      if (!inner.starts_with("run ")) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected [run <name>]");
      }
      std::string name(trim(inner.substr(4)));
      if (name.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty run name");
      if (!names.insert(name).second) throw ConfigError("duplicate run name '" + name + "'");
      out.sections.push_back({std::move(name), {}});
    } else {
      std::string key, value;
      if (parse_pair(line, source, line_no, key, value)) {
        auto& target = out.sections.empty() ? out.global : out.sections.back().values;
        target.set(key, value);
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

SectionedConfig SectionedConfig::load(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

}  // namespace cadr
