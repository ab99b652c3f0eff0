#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace toolret {

// Declarative key=value experiment file. '#' lines and blank lines are
// skipped; keys are checked against the documented schema so a typo fails
// loudly instead of silently using a default. CLI flags override file
// values via override_value. The raw file bytes are kept for byte-exact
// config snapshots in experiment directories.
class ExperimentConfig {
 public:
  ExperimentConfig() = default;

  static ExperimentConfig load_file(const std::string& path);
  static ExperimentConfig from_text(const std::string& text, const std::string& origin);

  // Known keys, with a one-line description each (the documented schema).
  static const std::map<std::string, std::string>& schema();

  void override_value(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated positive integers, e.g. "1,3,5,10".
  std::vector<size_t> get_cutoffs(const std::string& key,
                                  std::vector<size_t> fallback) const;

  const std::string& raw() const { return raw_; }
  const std::string& origin() const { return origin_; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::string raw_;
  std::string origin_;
};

}  // namespace toolret
