#pragma once

#include <map>
#include <set>
#include <string>

namespace atd {

// Flat key=value run configuration. '#' starts a comment; blank lines are
// skipped. Unknown keys are rejected against the caller's key set so typos
// fail loudly. CLI flags override file values, which override defaults.
class RunConfig {
 public:
  RunConfig() = default;
  static RunConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;

  // Throws ConfigError naming the first key outside `known`.
  void require_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace atd
