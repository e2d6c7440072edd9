#pragma once

#include <string>
#include <vector>

#include "lpalm/lp_oracle.hpp"
#include "lpalm/scal.hpp"

namespace lpalm {

/// Inexactness of one approximate ALM step from multiplier x^k.
struct ErrorTerms {
  double eps_L = 0.0;  ///< L_mu(V1, h1, x^k) - inf L_mu(., ., x^k)
  double eps_x = 0.0;  ///< sum w (x1 - Z_mu(V1, h1, x^k))^2
  int k = 0;
};

/// The inf is taken with alm_inner_solve at tol / 10.
ErrorTerms error_terms(const TabularMDP& mdp, const WeightFn& w, const AlmState& iterate_k,
                       const AlmState& iterate_k1, double tol);

/// Exact ALM step T x = Z_mu(V^, h^, x) with (V^, h^) the inner minimizer.
Vec proximal_map(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu, double tol = 1e-10);

/// E_w (x - Tx)^2.
double prox_residual(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu, double tol = 1e-10);

struct PptBound {
  double lhs = 0.0;  ///< sum w (x1 - T x^k)^2
  double rhs = 0.0;  ///< 2 eps_x + 4 mu eps_L
  ErrorTerms terms;
};

PptBound ppt_bound_check(const TabularMDP& mdp, const WeightFn& w, const AlmState& iterate_k,
                         const AlmState& iterate_k1, double tol);

struct ScalingReport {
  double mu = 0.0;
  double beta = 0.0;
  double xi1 = 0.0;
  double xi2 = 0.0;
  Vec x_hat;    ///< exact ALM update
  Vec x_tilde;  ///< minimizer of the composite penalty function
  Vec z_hat;
  Vec z_tilde;
  double x_ratio_dev = 0.0;     ///< max |x~ - xi2 x^|
  double z_ratio_dev = 0.0;     ///< max |Z~ - xi1 Z^|
  double x_identity_dev = 0.0;  ///< max |x~ - (1 - 1/(2 mu beta)) Z~|
  /// Projected-gradient norm of the composite function at the minimizer.
  double stationarity = 0.0;
};

double xi1(double mu, double beta);
double xi2(double mu, double beta);

/// Composite penalty function of (V, h, x) around the frozen multiplier x_k:
///   rho0 . V + (1/2mu) sum w x Z + (beta/2) sum w (x - Z)^2,  Z = Z_mu(V, h, x_k).
double composite_penalty_value(const TabularMDP& mdp, const WeightFn& w, const Vec& x_k, double mu, double beta,
                               const Vec& V, const Vec& h, const Vec& x);

/// Minimizes the composite penalty function (x and h eliminated in closed
/// form, V by Newton at tolerance `tol`) and compares with one exact ALM step
/// from the same x_k.
ScalingReport scaling_ratio_check(const TabularMDP& mdp, const WeightFn& w, const Vec& x_k, double mu, double beta,
                                  double tol = 1e-10);

struct ConvexityProbe {
  /// min over probes of Q(d) / ||d||^2 for the quadratic part Q.
  double min_quotient = 0.0;
  /// Smallest eigenvalue of the Schur complement of Q onto the x block, in
  /// the w-weighted metric.
  double x_block_constant = 0.0;
  double x_block_bound = 0.0;  ///< (1/2mu)(1 - 1/(4 mu beta))
  int n_probes = 0;
};

/// Quadratic part of the composite penalty function along a direction.
double composite_quadratic_form(const TabularMDP& mdp, const WeightFn& w, double mu, double beta, const Vec& dV,
                                const Vec& dh, const Vec& dx);

ConvexityProbe strong_convexity_probe(double mu, double beta, int n_probes, Rng& rng);

/// Sample trace-covariance of a stream of flattened gradients (divisor n-1).
/// With fewer than two samples returns 0 and appends a warning.
double trace_variance(const std::vector<Vec>& samples, std::vector<std::string>* warnings = nullptr);

struct VariancePoint {
  long step = 0;
  double unbias = 0.0;
  double bias = 0.0;
  /// max over samples of ||g_unbias - g_bias||
  double max_gap = 0.0;
};

struct VarianceAblation {
  std::vector<VariancePoint> series;
  std::vector<std::string> warnings;
  double mean_unbias = 0.0;
  double mean_bias = 0.0;
  std::vector<LogRow> log;  ///< training log of the underlying run
};

/// Value-head gradient on a minibatch with the exact Z(s,a) of the current
/// networks as the multiplier coefficient (unbiased) or with the sampled z
/// (biased).
Vec value_grad_estimate(const TabularMDP& mdp, const NetBundle& nets, const std::vector<TransitionTuple>& batch,
                        const std::vector<int>& initial, double mu, bool sampled);

/// Trains SCAL and, at `checkpoints` evenly spaced steps, draws `n_samples`
/// independent uniform minibatches and records the two gradient variances.
VarianceAblation grad_variance_ablation(const Environment& env, const ScalConfig& cfg, int n_samples,
                                        int checkpoints = 10);

struct NtkConfig {
  int width = 64;
  double radius = 100.0;
  double mu = 5.0;
  double beta = 10.0;
  double lr = 0.025;
  int rounds = 20;
  int inner_steps = 2000;
  std::uint64_t seed = 0;
};

/// Networks for the projected-gradient scheme: linear-output V on e_s and x on
/// e_sa; slack C * sigmoid(f(e_sa) - log C) as in the training bundle.
struct NtkNets {
  TwoLayerNet v;
  TwoLayerNet h;
  TwoLayerNet x;
  double slack_scale = 1.0;
  Vec values() const;
  Vec slack_raw() const;
  Vec slacks() const;
  Vec multipliers() const;
};

NtkNets make_ntk_nets(const TabularMDP& mdp, int width, Rng& rng);

/// Full-batch projected and averaged gradient scheme on the composite
/// penalty function; returns E_w (x - Tx)^2 after each round.
std::vector<double> ntk_residual_track(const TabularMDP& mdp, const WeightFn& w, const NtkConfig& cfg);

}  // namespace lpalm
