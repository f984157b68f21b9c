#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cladec::config {

/// Flat `key=value` settings with dotted keys. Lines starting with '#' and
/// blank lines are ignored; later assignments override earlier ones.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void erase(const std::string& key) { values_.erase(key); }
  /// Values of `overrides` replace ours.
  void merge(const Config& overrides);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list; empty when the key is absent.
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted `key=value` lines; the input to hash().
  std::string canonical_text() const;
  /// 16 hex digits of FNV-1a 64 over canonical_text().
  std::string hash() const;
  /// Subset with the given keys only (missing keys are skipped).
  Config select(const std::vector<std::string>& keys) const;

 private:
  std::map<std::string, std::string> values_;
};

std::string fnv1a_hex(const std::string& text);

}  // namespace cladec::config
