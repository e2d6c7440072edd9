#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

#include "lpalm/mdp.hpp"

namespace lpalm {

/// Weight table w(s,a) over state-action pairs in `TabularMDP::pair` order;
/// nonnegative and summing to 1.
using WeightFn = Vec;

WeightFn uniform_weights(const TabularMDP& mdp);
void check_weights(const TabularMDP& mdp, const WeightFn& w);

/// An iterative solver hit its iteration cap before reaching tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double achieved)
      : std::runtime_error(what), achieved_(achieved) {}
  double achieved() const { return achieved_; }

 private:
  double achieved_;
};

/// Iterate of the tabular augmented Lagrangian method.
struct AlmState {
  Vec V;
  Vec h;  ///< slack, >= 0
  Vec x;  ///< multiplier, >= 0
  double mu = 1.0;
  int iteration = 0;
  /// Largest negative multiplier entry zeroed by the last update.
  double clamped = 0.0;
  double inner_stationarity = 0.0;
  int inner_iterations = 0;

  static AlmState zeros(const TabularMDP& mdp, double mu);
};

/// Fixed-point iteration of the Bellman operator from V = 0 until
/// ||TV - V||_inf <= tol.
Vec value_iteration(const TabularMDP& mdp, double tol, int max_iter = 1000000);

/// Deterministic greedy policy; lowest action index wins ties.
Policy greedy_policy(const TabularMDP& mdp, const Vec& V);

/// c(s,a) = r + gamma P V - V(s) for every pair.
Vec constraint_gap(const TabularMDP& mdp, const Vec& V);

/// D^T y, where D = gamma P - E maps values to per-pair gaps.
Vec gap_transpose(const TabularMDP& mdp, const Vec& y);

/// x + mu (h + r + disc V(s') - V(s)) from scalar ingredients.
inline double z_value(double x_sa, double h_sa, double mu, double r, double v_s, double v_next, double disc) {
  return x_sa + mu * (h_sa + r + disc * v_next - v_s);
}

/// Sampled Z for one transition, bootstrapping with gamma^steps.
double z_sample(const TabularMDP& mdp, const AlmState& st, const TransitionTuple& t);

/// Conditional expectation of z_sample over s' ~ P(.|s,a).
double z_function(const TabularMDP& mdp, const AlmState& st, int s, int a);

/// Z for every pair given (V, h, x).
Vec z_table(const TabularMDP& mdp, const Vec& V, const Vec& h, const Vec& x, double mu);

/// rho0 . V + (1/2mu) sum w Z^2.
double augmented_lagrangian_value(const TabularMDP& mdp, const WeightFn& w, const AlmState& st);

enum class InnerMethod {
  /// Semismooth Newton on the V-only function obtained by minimizing out h.
  Newton,
  /// Projected gradient with backtracking on (V, h) jointly.
  ProjectedGradient,
};

struct InnerOptions {
  double tol = 1e-10;
  int max_iter = 500;
  InnerMethod method = InnerMethod::Newton;
  /// Weight on the rho0 . V term; 1 gives L_mu.
  double linear_scale = 1.0;
};

struct InnerResult {
  Vec V;
  Vec h;
  /// max of ||grad_V L||_inf and the projected h-gradient norm.
  double stationarity = 0.0;
  int iterations = 0;
};

/// Approximate argmin over V free, h >= 0 of L_mu(V, h, x). `V0` is a warm
/// start (zeros if empty). Throws ConvergenceError at the iteration cap.
InnerResult alm_inner_solve(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu,
                            const InnerOptions& opt, const Vec& V0 = Vec());

/// Stationarity measure used by alm_inner_solve at an arbitrary (V, h).
double inner_stationarity(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu, const Vec& V,
                          const Vec& h, double linear_scale = 1.0);

/// One outer step: inner solve, then x <- Z. Negative entries of the new x
/// (from inexact solves) are zeroed and their magnitude reported.
AlmState alm_iterate(const TabularMDP& mdp, const WeightFn& w, const AlmState& st, const InnerOptions& opt);

struct AlmRun {
  AlmState state;
  int outer_iterations = 0;
  /// ||x^k - x^{k-1}||_inf at the last step.
  double last_change = 0.0;
};

/// Runs alm_iterate from zeros until the multiplier change drops below
/// `outer_tol` or `max_outer` steps elapse.
AlmRun alm_solve(const TabularMDP& mdp, const WeightFn& w, double mu, int max_outer, double outer_tol,
                 const InnerOptions& opt);

struct DualResidual {
  Vec per_state;
  double norm = 0.0;
};

/// Flow-balance residual sum_{s,a} (delta_{s'}(s) - gamma P(s'|s,a)) w x - rho0(s').
DualResidual dual_residuals(const TabularMDP& mdp, const WeightFn& w, const Vec& x);

/// pi(a|s) proportional to w(s,a) x(s,a); zero-mass states get the uniform row.
Policy policy_from_multiplier(const WeightFn& w, const Vec& x, int n_actions);

struct KktReport {
  double prox = 0.0;    ///< ||x - [x_prev + mu (h + r + gamma P V - V)]||_inf
  double dual = 0.0;    ///< flow-balance residual norm
  double nonneg = 0.0;  ///< largest negative entry of x or h, as a positive number
};

KktReport kkt_check(const TabularMDP& mdp, const WeightFn& w, const Vec& V, const Vec& h, const Vec& x,
                    const Vec& x_prev, double mu);

/// Exact solution summary exchanged between the `oracle` and `verify`
/// commands.
struct OracleReport {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
  double bellman_residual = 0.0;
  double dual_residual = 0.0;
  Vec V;
  Vec x;
  std::vector<int> policy;
};

OracleReport compute_oracle(const TabularMDP& mdp, double vi_tol, double mu, const InnerOptions& opt,
                            int max_outer);
void write_oracle_report(std::ostream& out, const OracleReport& rep);
OracleReport read_oracle_report(std::istream& in);

}  // namespace lpalm
