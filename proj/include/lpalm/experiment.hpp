#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpalm/config.hpp"

namespace lpalm {

/// Runtime failure inside one stage of a run; `component()` names it.
class ComponentError : public std::runtime_error {
 public:
  ComponentError(std::string component, const std::string& what)
      : std::runtime_error(component + ": " + what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

inline constexpr const char* kMetricsHeader = "seed,step,window_return,objective,penalty_residual,mass_estimate";

void write_metrics_row(std::ostream& out, std::uint64_t seed, const LogRow& row);
void write_metrics(std::ostream& out, std::uint64_t seed, const std::vector<LogRow>& rows);

struct Check {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

/// "CHECK <name> <measured> <threshold> <PASS|FAIL>"
std::string format_check(const Check& c);

/// Return threshold `fraction` of the way to optimal in relative terms:
/// opt - (1 - fraction) |opt|.
double return_threshold(double optimal, double fraction);

/// First logged step whose window return reaches `threshold`; -1 if none.
long first_hit_step(const std::vector<LogRow>& rows, double threshold);

/// Median of the first-hit steps with "never" (-1) ordered last; -1 when the
/// median itself never hits.
long median_hit_step(std::vector<long> hits);

/// Exact-oracle, ALM, scaling, convexity and NTK checks behind `verify`.
std::vector<Check> verify_checks(const ExperimentConfig& cfg);

struct RunOutcome {
  int exit_code = 0;
  std::vector<std::string> files;  ///< paths written, in creation order
};

/// Executes the configured command for every seed, writing metrics files,
/// config.echo and (for verify) report.txt under `out`. Progress goes to
/// `log`. Bad configuration raises ConfigError; a failing stage raises
/// ComponentError.
RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace lpalm
