#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace genspec {

// Flat key = value configuration. The set of keys is fixed when the Config is
// built from its defaults; files and overrides may only assign known keys.
class Config {
 public:
  Config() = default;
  explicit Config(std::map<std::string, std::string> defaults) : values_(std::move(defaults)) {}

  /// Parses `key = value` lines; `#` starts a comment. Unknown keys throw UsageError.
  void merge_text(const std::string& text, const std::string& origin = "<text>");
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;  // comma separated
  /// Non-empty value required.
  const std::string& required(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Every key in sorted order; parsing it back reproduces this config.
  std::string resolved() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace genspec
