#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sublm {

/// Flat key=value settings for one command, resolved in three layers:
/// declared defaults, then a config file, then explicit flags. Keys outside
/// the declared set are rejected at whichever layer introduces them. The
/// resolved set serializes to sorted key=value lines whose hash stamps
/// every output artifact.
class RunConfig {
 public:
  struct KeySpec {
    std::string name;
    std::string default_value;
    std::string help;
  };

  explicit RunConfig(std::vector<KeySpec> specs);

  const std::vector<KeySpec>& specs() const { return specs_; }

  /// key=value lines; blank lines and lines starting with # are skipped.
  void load_file(const std::filesystem::path& path);
  /// One explicit override (the flag layer).
  void set(const std::string& key, const std::string& value);

  bool is_default(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // true/false/1/0
  std::vector<std::uint64_t> get_u64_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// Sorted `key=value` lines of the fully resolved config.
  std::string serialized() const;
  /// 16 hex digits of FNV-1a over serialized().
  std::string hash() const;

 private:
  struct Entry {
    std::string value;
    bool overridden = false;
  };
  std::vector<KeySpec> specs_;
  std::vector<Entry> values_;  // parallel to specs_
  std::size_t index_of(const std::string& key) const;  // throws on unknown
};

}  // namespace sublm
