#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bilevel {

/// Flat key-value run configuration with INI-style sections. Keys are
/// addressed as "section.key" ("" section for top-level keys). Values are
/// kept as strings so a load/save round-trip is lossless.
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  std::string get_str(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key, double dflt) const;
  int get_int(const std::string& key, int dflt) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& dflt) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace bilevel
