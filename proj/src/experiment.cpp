#include "lpalm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace lpalm {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Runs `body`, converting anything but configuration and input errors into
/// a ComponentError tagged with `component`.
template <class F>
auto stage(const std::string& component, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ConfigError&) {
    throw;
  } catch (const ComponentError&) {
    throw;
  } catch (const InputError& e) {
    throw ConfigError(component, component + ": " + e.what());
  } catch (const std::exception& e) {
    throw ComponentError(component, e.what());
  }
}

class OutputDir {
 public:
  explicit OutputDir(const std::string& path) : root_(path) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw ComponentError("output", "cannot create '" + path + "': " + ec.message());
  }

  std::ofstream open(const std::string& name) {
    const fs::path p = root_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ComponentError("output", "cannot write '" + p.string() + "'");
    files.push_back(p.string());
    return out;
  }

  std::vector<std::string> files;

 private:
  fs::path root_;
};

struct Baselines {
  double optimal = 0.0;
  double random = 0.0;
};

Baselines baselines(const Environment& env, double vi_tol) {
  const Vec V = value_iteration(env.model, vi_tol);
  return {env.evaluate(greedy_policy(env.model, V)),
          env.evaluate(Policy::uniform(env.model.n_states(), env.model.n_actions()))};
}

/// Mean and sample standard deviation of the window return (and means of the
/// other columns) per logged step across seeds.
void write_summary(std::ostream& out, const std::vector<std::vector<LogRow>>& runs) {
  out << "step,mean_return,std_return,mean_objective,mean_penalty_residual,mean_mass_estimate,n_seeds\n";
  std::map<long, std::vector<const LogRow*>> by_step;
  for (const auto& run : runs)
    for (const LogRow& r : run) by_step[r.step].push_back(&r);
  for (const auto& [step, rows] : by_step) {
    const double n = static_cast<double>(rows.size());
    double ret = 0, obj = 0, pen = 0, mass = 0;
    for (const LogRow* r : rows) {
      ret += r->window_return;
      obj += r->objective;
      pen += r->penalty_residual;
      mass += r->mass_estimate;
    }
    ret /= n;
    double var = 0;
    for (const LogRow* r : rows) var += (r->window_return - ret) * (r->window_return - ret);
    const double sd = rows.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    out << step << ',' << num(ret) << ',' << num(sd) << ',' << num(obj / n) << ',' << num(pen / n) << ','
        << num(mass / n) << ',' << rows.size() << '\n';
  }
}

std::vector<LogRow> alm_trace(const Environment& env, const ExperimentConfig& cfg, AlmState* final_state) {
  const TabularMDP& mdp = env.model;
  const WeightFn w = uniform_weights(mdp);
  const InnerOptions opt = cfg.inner();
  AlmState st = AlmState::zeros(mdp, cfg.number("alm.mu"));
  std::vector<LogRow> rows;
  const long max_outer = cfg.integer("alm.max_outer");
  const double outer_tol = cfg.number("alm.outer_tol");
  for (long k = 0; k < max_outer; ++k) {
    AlmState next = alm_iterate(mdp, w, st, opt);
    const double change = (next.x - st.x).lpNorm<Eigen::Infinity>();
    st = std::move(next);
    LogRow r;
    r.step = k + 1;
    r.window_return = env.evaluate(policy_from_multiplier(w, st.x, mdp.n_actions()));
    r.objective = mdp.rho0().dot(st.V);
    r.penalty_residual = dual_residuals(mdp, w, st.x).norm;
    r.mass_estimate = w.dot(st.x);
    rows.push_back(r);
    if (change <= outer_tol) break;
  }
  if (final_state) *final_state = st;
  return rows;
}

void print_oracle(std::ostream& log, const OracleReport& rep) {
  log << "state  V*              action\n";
  for (int s = 0; s < rep.n_states; ++s) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "%5d  %-14.8f  %d\n", s, rep.V(s), rep.policy[static_cast<std::size_t>(s)]);
    log << buf;
  }
  log << "bellman_residual " << num(rep.bellman_residual) << "\ndual_residual " << num(rep.dual_residual) << '\n';
}

using SeedRunner = std::function<std::vector<LogRow>(const Environment&, const ScalConfig&)>;

void run_training(const ExperimentConfig& cfg, std::ostream& log, OutputDir& dir, const std::string& component,
                  const SeedRunner& runner) {
  std::ofstream metrics = dir.open("metrics.csv");
  metrics << kMetricsHeader << '\n';
  std::vector<std::vector<LogRow>> runs;
  std::optional<Baselines> base;
  for (std::uint64_t seed : cfg.seeds()) {
    const Environment env = stage("env", [&] { return cfg.environment(seed); });
    if (!base) base = stage("oracle", [&] { return baselines(env, cfg.number("alm.vi_tol")); });
    const ScalConfig sc = cfg.scal(seed);
    std::vector<LogRow> rows = stage(component, [&] { return runner(env, sc); });
    write_metrics(metrics, seed, rows);
    if (!rows.empty())
      log << component << " seed " << seed << " final return " << num(rows.back().window_return) << " (optimal "
          << num(base->optimal) << ", uniform " << num(base->random) << ")\n";
    runs.push_back(std::move(rows));
  }
  std::ofstream summary = dir.open("summary.csv");
  write_summary(summary, runs);
}

}  // namespace

void write_metrics_row(std::ostream& out, std::uint64_t seed, const LogRow& row) {
  out << seed << ',' << row.step << ',' << num(row.window_return) << ',' << num(row.objective) << ','
      << num(row.penalty_residual) << ',' << num(row.mass_estimate) << '\n';
}

void write_metrics(std::ostream& out, std::uint64_t seed, const std::vector<LogRow>& rows) {
  for (const LogRow& r : rows) write_metrics_row(out, seed, r);
}

std::string format_check(const Check& c) {
  return "CHECK " + c.name + " " + num(c.measured) + " " + num(c.threshold) + " " + (c.pass ? "PASS" : "FAIL");
}

double return_threshold(double optimal, double fraction) { return optimal - (1.0 - fraction) * std::abs(optimal); }

long first_hit_step(const std::vector<LogRow>& rows, double threshold) {
  for (const LogRow& r : rows)
    if (r.window_return >= threshold) return r.step;
  return -1;
}

long median_hit_step(std::vector<long> hits) {
  if (hits.empty()) return -1;
  std::sort(hits.begin(), hits.end(), [](long a, long b) {
    if (a < 0) return false;
    if (b < 0) return true;
    return a < b;
  });
  return hits[(hits.size() - 1) / 2];
}

std::vector<Check> verify_checks(const ExperimentConfig& cfg) {
  std::vector<Check> checks;
  const auto at_most = [&](const std::string& name, double measured, double threshold) {
    checks.push_back({name, measured, threshold, measured <= threshold});
  };
  const auto at_least = [&](const std::string& name, double measured, double threshold) {
    checks.push_back({name, measured, threshold, measured >= threshold});
  };

  const Environment env = stage("env", [&] { return cfg.environment(0); });
  const TabularMDP& mdp = env.model;
  const WeightFn w = uniform_weights(mdp);

  stage("alm", [&] {
    const Vec Vstar = value_iteration(mdp, cfg.number("alm.vi_tol"));
    AlmState st;
    alm_trace(env, cfg, &st);
    at_most("alm_value_error", (st.V - Vstar).lpNorm<Eigen::Infinity>(), 1e-4);
    at_most("alm_dual_residual", dual_residuals(mdp, w, st.x).norm, 1e-4);
    at_most("occupancy_mass", std::abs(w.dot(st.x) - 1.0 / (1.0 - mdp.gamma())), 1e-3);
    const Policy from_x = policy_from_multiplier(w, st.x, mdp.n_actions());
    const Policy greedy = greedy_policy(mdp, Vstar);
    int mismatches = 0;
    for (int s = 0; s < mdp.n_states(); ++s) mismatches += from_x.argmax(s) != greedy.argmax(s);
    at_most("policy_recovery_mismatches", mismatches, 0);

    // Inexact step from an intermediate multiplier against the proximal-point bound.
    InnerOptions loose = cfg.inner();
    loose.tol = 1e-3;
    loose.method = InnerMethod::ProjectedGradient;
    loose.max_iter = 50;
    AlmState k0 = AlmState::zeros(mdp, cfg.number("alm.mu"));
    k0 = alm_iterate(mdp, w, k0, cfg.inner());
    AlmState k1 = k0;
    try {
      k1 = alm_iterate(mdp, w, k0, loose);
    } catch (const ConvergenceError&) {
      k1 = alm_iterate(mdp, w, k0, cfg.inner());
    }
    const PptBound b = ppt_bound_check(mdp, w, k0, k1, cfg.number("alm.tol"));
    at_most("ppt_bound_excess", b.lhs - b.rhs, 1e-10);
    return 0;
  });

  const double mu = cfg.number("verify.mu"), beta = cfg.number("verify.beta");
  Rng rng(static_cast<std::uint64_t>(cfg.integer("verify.seed")));
  stage("scaling", [&] {
    const TabularMDP small = random_mdp(3, 2, 0.9, rng);
    const WeightFn ws = uniform_weights(small);
    Vec x_k(small.n_pairs());
    for (Eigen::Index i = 0; i < x_k.size(); ++i) x_k(i) = rng.uniform();
    const ScalingReport rep = scaling_ratio_check(small, ws, x_k, mu, beta, cfg.number("alm.tol"));
    at_most("scaling_xi2_ratio", rep.x_ratio_dev, 1e-4);
    at_most("scaling_x_identity", rep.x_identity_dev, 1e-8);
    at_most("scaling_stationarity", rep.stationarity, 1e-8);
    return 0;
  });
  stage("convexity", [&] {
    const ConvexityProbe p = strong_convexity_probe(mu, beta, static_cast<int>(cfg.integer("verify.probes")), rng);
    at_least("x_block_convexity", p.x_block_constant, p.x_block_bound - 1e-10);
    at_least("quadratic_probe_min", p.min_quotient, -1e-10);
    return 0;
  });
  stage("ntk", [&] {
    const TabularMDP small = random_mdp(3, 2, 0.5, rng);
    const NtkConfig nc = cfg.ntk(static_cast<int>(cfg.integer("ntk.width")),
                                 static_cast<std::uint64_t>(cfg.integer("verify.seed")));
    const std::vector<double> track = ntk_residual_track(small, uniform_weights(small), nc);
    const double best = *std::min_element(track.begin(), track.end());
    at_least("ntk_residual_decay", track.front() / std::max(best, 1e-300), 10.0);
    return 0;
  });
  return checks;
}

RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  OutputDir dir(cfg.get("out"));
  {
    std::ofstream echo = dir.open("config.echo");
    cfg.echo(echo);
  }
  const std::string cmd = cfg.command();
  RunOutcome outcome;

  if (cmd == "oracle") {
    std::ofstream metrics = dir.open("metrics.csv");
    metrics << kMetricsHeader << '\n';
    const Environment env = stage("env", [&] { return cfg.environment(0); });
    const OracleReport rep = stage("oracle", [&] {
      return compute_oracle(env.model, cfg.number("alm.vi_tol"), cfg.number("alm.mu"), cfg.inner(),
                            static_cast<int>(cfg.integer("alm.max_outer")));
    });
    print_oracle(log, rep);
    std::ofstream report = dir.open("oracle.txt");
    write_oracle_report(report, rep);
    std::vector<int> acts = rep.policy;
    LogRow row;
    row.window_return = env.evaluate(Policy::deterministic(acts, rep.n_actions));
    row.objective = env.model.rho0().dot(rep.V);
    row.penalty_residual = rep.bellman_residual;
    row.mass_estimate = uniform_weights(env.model).dot(rep.x);
    for (std::uint64_t seed : cfg.seeds()) write_metrics_row(metrics, seed, row);
  } else if (cmd == "alm") {
    std::ofstream metrics = dir.open("metrics.csv");
    metrics << kMetricsHeader << '\n';
    for (std::uint64_t seed : cfg.seeds()) {
      const Environment env = stage("env", [&] { return cfg.environment(seed); });
      AlmState st;
      const std::vector<LogRow> rows = stage("alm", [&] { return alm_trace(env, cfg, &st); });
      write_metrics(metrics, seed, rows);
      const Vec Vstar = stage("oracle", [&] { return value_iteration(env.model, cfg.number("alm.vi_tol")); });
      log << "alm seed " << seed << " outer " << rows.size() << " max|V-V*| "
          << num((st.V - Vstar).lpNorm<Eigen::Infinity>()) << " dual residual "
          << num(rows.empty() ? 0.0 : rows.back().penalty_residual) << '\n';
    }
  } else if (cmd == "scal") {
    run_training(cfg, log, dir, "scal",
                 [](const Environment& env, const ScalConfig& sc) { return scal_train(env, sc).log; });
  } else if (cmd == "deep-alm") {
    const int inner = static_cast<int>(cfg.integer("deep.inner_steps"));
    run_training(cfg, log, dir, "deep-alm", [inner](const Environment& env, const ScalConfig& sc) {
      return deep_alm_train(env, sc, inner).log;
    });
  } else if (cmd == "ablate-grad") {
    std::ofstream metrics = dir.open("metrics.csv");
    metrics << kMetricsHeader << '\n';
    std::ofstream var = dir.open("variance.csv");
    var << "seed,step,trace_var_unbias,trace_var_bias,max_gap\n";
    for (std::uint64_t seed : cfg.seeds()) {
      const Environment env = stage("env", [&] { return cfg.environment(seed); });
      const VarianceAblation ab = stage("ablate-grad", [&] {
        return grad_variance_ablation(env, cfg.scal(seed), static_cast<int>(cfg.integer("ablate.samples")),
                                      static_cast<int>(cfg.integer("ablate.checkpoints")));
      });
      write_metrics(metrics, seed, ab.log);
      for (const VariancePoint& p : ab.series)
        var << seed << ',' << p.step << ',' << num(p.unbias) << ',' << num(p.bias) << ',' << num(p.max_gap) << '\n';
      for (const std::string& w : ab.warnings) log << "warning: " << w << '\n';
      log << "ablate-grad seed " << seed << " mean trace variance unbias " << num(ab.mean_unbias) << " bias "
          << num(ab.mean_bias) << '\n';
    }
  } else if (cmd == "ablate-multistep") {
    std::ofstream summary = dir.open("multistep_summary.csv");
    summary << "lookahead,seed,first_hit_step\n";
    std::optional<Baselines> base;
    for (long l : cfg.integer_list("multistep.lookaheads")) {
      std::ofstream metrics = dir.open("metrics_l" + std::to_string(l) + ".csv");
      metrics << "# lookahead=" << l << '\n' << kMetricsHeader << '\n';
      std::vector<long> hits;
      for (std::uint64_t seed : cfg.seeds()) {
        const Environment env = stage("env", [&] { return cfg.environment(seed); });
        if (!base) base = stage("oracle", [&] { return baselines(env, cfg.number("alm.vi_tol")); });
        ScalConfig sc = cfg.scal(seed);
        sc.lookahead = static_cast<int>(l);
        const std::vector<LogRow> rows = stage("ablate-multistep", [&] { return scal_train(env, sc).log; });
        write_metrics(metrics, seed, rows);
        const long hit = first_hit_step(rows, return_threshold(base->optimal, cfg.number("multistep.threshold")));
        hits.push_back(hit);
        summary << l << ',' << seed << ',' << hit << '\n';
      }
      log << "lookahead " << l << " median first-hit step " << median_hit_step(hits) << '\n';
    }
  } else if (cmd == "verify") {
    std::ofstream metrics = dir.open("metrics.csv");
    metrics << kMetricsHeader << '\n';
    const std::vector<Check> checks = verify_checks(cfg);
    std::ofstream report = dir.open("report.txt");
    for (const Check& c : checks) {
      report << format_check(c) << '\n';
      log << format_check(c) << '\n';
      if (!c.pass) outcome.exit_code = 1;
    }
  }
  outcome.files = dir.files;
  return outcome;
}

}  // namespace lpalm
