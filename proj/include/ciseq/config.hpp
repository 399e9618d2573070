#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ciseq {

/// Flat key-value configuration. File format: one `key = value` per line,
/// `#` starts a comment, blank lines ignored. Keys are case-sensitive.
class Config {
 public:
  Config() = default;

  static Config load(const std::string& path);
  static Config parse(const std::string& text, const std::string& origin);

  /// Applies `key=value` override strings on top of the current entries.
  void apply_overrides(const std::vector<std::string>& kvs);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string str(const std::string& key) const;
  std::string str_or(const std::string& key, const std::string& def) const;
  double num(const std::string& key) const;
  double num_or(const std::string& key, double def) const;
  int64_t integer(const std::string& key) const;
  int64_t integer_or(const std::string& key, int64_t def) const;
  bool flag_or(const std::string& key, bool def) const;

  /// Throws when an entry's key is not in `known`.
  void check_known(const std::set<std::string>& known) const;

  /// Sorted `key = value` lines, suitable for the resolved-config snapshot.
  std::string snapshot() const;
  void write_snapshot(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace ciseq
