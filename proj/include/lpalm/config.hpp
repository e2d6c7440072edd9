#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpalm/analysis.hpp"
#include "lpalm/envs.hpp"
#include "lpalm/lp_oracle.hpp"
#include "lpalm/scal.hpp"

namespace lpalm {

/// Bad configuration: unknown key, unparsable value or value out of range.
/// `key()` names the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"oracle", "alm", "scal", "deep-alm",
                                              "ablate-grad", "ablate-multistep", "verify"};
  return names;
}

/// Flat key=value experiment configuration. Every key has a default; keys
/// use dotted sections (scal.mu, env.gamma).
class ExperimentConfig {
 public:
  ExperimentConfig();

  /// Known keys in sorted order with their defaults.
  static const std::map<std::string, std::string>& defaults();
  static bool known(const std::string& key) { return defaults().count(key) > 0; }

  /// Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  /// Reads `key = value` lines; blank lines and lines starting with '#' are
  /// skipped.
  void merge_text(std::istream& in);
  void merge_file(const std::string& path);

  /// Fully resolved config, one `key=value` per line in key order.
  void echo(std::ostream& out) const;
  std::string echo() const;

  /// Typed access; a malformed value raises ConfigError naming the key.
  double number(const std::string& key) const;
  long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<long> integer_list(const std::string& key) const;

  std::string command() const { return get("command"); }
  std::vector<std::uint64_t> seeds() const;

  Environment environment(std::uint64_t seed) const;
  ScalConfig scal(std::uint64_t seed) const;
  InnerOptions inner() const;
  NtkConfig ntk(int width, std::uint64_t seed) const;

  /// Parses every typed entry once and checks the ranges the solvers
  /// require.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lpalm
