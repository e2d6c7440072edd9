#include "lpalm/analysis.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace lpalm {

namespace {

InnerOptions precise(double tol) {
  InnerOptions opt;
  opt.tol = tol;
  return opt;
}

double weighted_sq(const WeightFn& w, const Vec& d) { return d.cwiseProduct(d).dot(w); }

}  // namespace

ErrorTerms error_terms(const TabularMDP& mdp, const WeightFn& w, const AlmState& iterate_k,
                       const AlmState& iterate_k1, double tol) {
  const double mu = iterate_k.mu;
  const InnerResult best = alm_inner_solve(mdp, w, iterate_k.x, mu, precise(tol / 10.0), iterate_k1.V);
  const AlmState at_inf{best.V, best.h, iterate_k.x, mu};
  const AlmState at_new{iterate_k1.V, iterate_k1.h, iterate_k.x, mu};
  ErrorTerms out;
  out.k = iterate_k.iteration;
  out.eps_L = augmented_lagrangian_value(mdp, w, at_new) - augmented_lagrangian_value(mdp, w, at_inf);
  out.eps_x = weighted_sq(w, iterate_k1.x - z_table(mdp, iterate_k1.V, iterate_k1.h, iterate_k.x, mu));
  return out;
}

Vec proximal_map(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu, double tol) {
  const InnerResult in = alm_inner_solve(mdp, w, x, mu, precise(tol));
  return z_table(mdp, in.V, in.h, x, mu);
}

double prox_residual(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu, double tol) {
  return weighted_sq(w, x - proximal_map(mdp, w, x, mu, tol));
}

PptBound ppt_bound_check(const TabularMDP& mdp, const WeightFn& w, const AlmState& iterate_k,
                         const AlmState& iterate_k1, double tol) {
  PptBound out;
  out.terms = error_terms(mdp, w, iterate_k, iterate_k1, tol);
  out.lhs = weighted_sq(w, iterate_k1.x - proximal_map(mdp, w, iterate_k.x, iterate_k.mu, tol / 10.0));
  out.rhs = 2.0 * out.terms.eps_x + 4.0 * iterate_k.mu * out.terms.eps_L;
  return out;
}

double xi1(double mu, double beta) { return 4.0 * mu * beta / (4.0 * mu * beta - 1.0); }
double xi2(double mu, double beta) { return (4.0 * mu * beta - 2.0) / (4.0 * mu * beta - 1.0); }

double composite_penalty_value(const TabularMDP& mdp, const WeightFn& w, const Vec& x_k, double mu, double beta,
                               const Vec& V, const Vec& h, const Vec& x) {
  const Vec Z = z_table(mdp, V, h, x_k, mu);
  return mdp.rho0().dot(V) + x.cwiseProduct(Z).dot(w) / (2.0 * mu) + 0.5 * beta * weighted_sq(w, x - Z);
}

namespace {

/// Projected-gradient norm of the composite penalty function.
double composite_stationarity(const TabularMDP& mdp, const WeightFn& w, const Vec& x_k, double mu, double beta,
                              const Vec& V, const Vec& h, const Vec& x) {
  const Vec Z = z_table(mdp, V, h, x_k, mu);
  const Vec gx = w.cwiseProduct(Z / (2.0 * mu) + beta * (x - Z));
  const Vec gz = w.cwiseProduct(x / (2.0 * mu) - beta * (x - Z));
  const Vec gh = mu * gz;
  const Vec gV = mdp.rho0() + mu * gap_transpose(mdp, gz);
  double gH = 0.0;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    gH = std::max(gH, h(i) > 0.0 ? std::abs(gh(i)) : std::max(0.0, -gh(i)));
  return std::max({gx.lpNorm<Eigen::Infinity>(), gV.lpNorm<Eigen::Infinity>(), gH});
}

}  // namespace

ScalingReport scaling_ratio_check(const TabularMDP& mdp, const WeightFn& w, const Vec& x_k, double mu, double beta,
                                  double tol) {
  if (!(beta > 1.0 / (4.0 * mu))) throw InputError("scaling check needs beta > 1/(4 mu)");
  ScalingReport rep;
  rep.mu = mu;
  rep.beta = beta;
  rep.xi1 = xi1(mu, beta);
  rep.xi2 = xi2(mu, beta);

  const InnerResult alm = alm_inner_solve(mdp, w, x_k, mu, precise(tol));
  rep.z_hat = z_table(mdp, alm.V, alm.h, x_k, mu);
  rep.x_hat = rep.z_hat;

  // Eliminating x leaves rho0 . V + (1/(2 mu xi1)) sum w Z^2, i.e. the inner
  // problem with the linear term scaled by xi1.
  InnerOptions opt = precise(tol);
  opt.linear_scale = rep.xi1;
  const InnerResult pen = alm_inner_solve(mdp, w, x_k, mu, opt, alm.V);
  rep.z_tilde = z_table(mdp, pen.V, pen.h, x_k, mu);
  rep.x_tilde = (1.0 - 1.0 / (2.0 * mu * beta)) * rep.z_tilde;

  rep.x_ratio_dev = (rep.x_tilde - rep.xi2 * rep.x_hat).lpNorm<Eigen::Infinity>();
  rep.z_ratio_dev = (rep.z_tilde - rep.xi1 * rep.z_hat).lpNorm<Eigen::Infinity>();
  rep.x_identity_dev = (rep.x_tilde - (1.0 - 1.0 / (2.0 * mu * beta)) * rep.z_tilde).lpNorm<Eigen::Infinity>();
  rep.stationarity = composite_stationarity(mdp, w, x_k, mu, beta, pen.V, pen.h, rep.x_tilde);
  return rep;
}

double composite_quadratic_form(const TabularMDP& mdp, const WeightFn& w, double mu, double beta, const Vec& dV,
                                const Vec& dh, const Vec& dx) {
  const Vec dZ = mu * (dh + constraint_gap(mdp, dV) - mdp.reward());
  return dx.cwiseProduct(dZ).dot(w) / (2.0 * mu) + 0.5 * beta * weighted_sq(w, dx - dZ);
}

ConvexityProbe strong_convexity_probe(double mu, double beta, int n_probes, Rng& rng) {
  if (!(beta > 1.0 / (4.0 * mu))) throw InputError("convexity probe needs beta > 1/(4 mu)");
  const TabularMDP mdp = random_mdp(3, 2, 0.9, rng);
  const WeightFn w = uniform_weights(mdp);
  const int S = mdp.n_states(), SA = mdp.n_pairs();

  ConvexityProbe out;
  out.n_probes = n_probes;
  out.x_block_bound = (1.0 - 1.0 / (4.0 * mu * beta)) / (2.0 * mu);
  out.min_quotient = std::numeric_limits<double>::infinity();
  const double a = 1.0 / (2.0 * mu * beta);
  for (int p = 0; p < n_probes; ++p) {
    Vec dV(S), dh(SA), dx(SA);
    for (auto* v : {&dV, &dh, &dx})
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = rng.normal();
    if (p % 3 == 1) {
      // Aim dZ at (1 - a) dx, where the form is smallest for this dx.
      dh = (1.0 - a) * dx / mu - (constraint_gap(mdp, dV) - mdp.reward());
    } else if (p % 3 == 2) {
      dx.setZero();
      dh = -(constraint_gap(mdp, dV) - mdp.reward());
    }
    const double q = composite_quadratic_form(mdp, w, mu, beta, dV, dh, dx);
    const double norm2 = dV.squaredNorm() + dh.squaredNorm() + dx.squaredNorm();
    out.min_quotient = std::min(out.min_quotient, q / norm2);
  }
  if (n_probes == 0) out.min_quotient = 0.0;

  // Hessian of Q (Q = d^T H d / 2) in (dx | dV, dh); B maps (dV, dh) to dZ.
  Mat B = Mat::Zero(SA, S + SA);
  for (int j = 0; j < S; ++j) {
    Vec e = Vec::Zero(S);
    e(j) = 1.0;
    B.col(j) = mu * (constraint_gap(mdp, e) - mdp.reward());
  }
  B.rightCols(SA) = mu * Mat::Identity(SA, SA);
  const Mat W = w.asDiagonal();
  const Mat Hxx = beta * W;
  const Mat Hxy = (1.0 / (2.0 * mu) - beta) * W * B;
  const Mat Hyy = beta * B.transpose() * W * B;
  const Mat schur = Hxx - Hxy * Hyy.completeOrthogonalDecomposition().pseudoInverse() * Hxy.transpose();
  const Vec w_isqrt = w.cwiseSqrt().cwiseInverse();
  const Mat scaled = w_isqrt.asDiagonal() * schur * w_isqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (scaled + scaled.transpose()));
  out.x_block_constant = 0.5 * eig.eigenvalues().minCoeff();
  return out;
}

double trace_variance(const std::vector<Vec>& samples, std::vector<std::string>* warnings) {
  if (samples.size() < 2) {
    if (warnings) warnings->push_back("variance of fewer than two samples reported as 0");
    return 0.0;
  }
  Vec mean = Vec::Zero(samples.front().size());
  for (const Vec& g : samples) mean += g;
  mean /= static_cast<double>(samples.size());
  double total = 0.0;
  for (const Vec& g : samples) total += (g - mean).squaredNorm();
  return total / static_cast<double>(samples.size() - 1);
}

Vec value_grad_estimate(const TabularMDP& mdp, const NetBundle& nets, const std::vector<TransitionTuple>& batch,
                        const std::vector<int>& initial, double mu, bool sampled) {
  const int S = mdp.n_states(), A = mdp.n_actions();
  Vec V(S);
  for (int s = 0; s < S; ++s) V(s) = nets.value(s);
  const double b = static_cast<double>(batch.size());
  NetBundle::OutputCoefs c = nets.zero_coefs();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TransitionTuple& t = batch[i];
    const int sa = t.s * A + t.a;
    const double x = nets.x(t.s, t.a);
    const double h = nets.slack(t.s, t.a);
    const double disc = std::pow(mdp.gamma(), t.steps);
    const double coef = sampled ? z_value(x, h, mu, t.r, V(t.s), V(t.s_next), disc)
                                : z_value(x, h, mu, mdp.reward()(sa), V(t.s), mdp.transition().row(sa).dot(V),
                                          mdp.gamma());
    nets.add_value_grad(initial[i], 1.0 / b, c);
    nets.add_value_grad(t.s_next, coef * disc / b, c);
    nets.add_value_grad(t.s, -coef / b, c);
  }
  const HeadGrads g = nets.weight_grads(c);
  return Eigen::Map<const Vec>(g[kValue].data(), g[kValue].size());
}

VarianceAblation grad_variance_ablation(const Environment& env, const ScalConfig& cfg, int n_samples,
                                        int checkpoints) {
  if (cfg.lookahead != 1) throw InputError("the gradient ablation uses one-step tuples");
  if (checkpoints < 1) throw InputError("need at least one checkpoint");
  VarianceAblation out;
  const long every = std::max<long>(1, cfg.total_steps / checkpoints);
  Rng root(cfg.seed);
  root.split();
  Rng draw = root.split().split();
  const auto hook = [&](long k, const NetBundle& nets, const ReplayBuffer& buffer) {
    if ((k + 1) % every != 0) return;
    std::vector<Vec> unbias, bias;
    VariancePoint pt;
    pt.step = k + 1;
    for (int n = 0; n < n_samples; ++n) {
      std::vector<TransitionTuple> batch;
      for (std::size_t slot : buffer.sample_uniform(static_cast<std::size_t>(cfg.batch), draw))
        batch.push_back(buffer.at(slot));
      const std::vector<int> initial = buffer.sample_initial(static_cast<std::size_t>(cfg.batch), draw);
      unbias.push_back(value_grad_estimate(env.model, nets, batch, initial, cfg.mu, false));
      bias.push_back(value_grad_estimate(env.model, nets, batch, initial, cfg.mu, true));
      pt.max_gap = std::max(pt.max_gap, (unbias.back() - bias.back()).norm());
    }
    pt.unbias = trace_variance(unbias, &out.warnings);
    pt.bias = trace_variance(bias, &out.warnings);
    out.series.push_back(pt);
  };
  out.log = scal_train(env, cfg, hook).log;
  for (const VariancePoint& p : out.series) {
    out.mean_unbias += p.unbias;
    out.mean_bias += p.bias;
  }
  if (!out.series.empty()) {
    out.mean_unbias /= static_cast<double>(out.series.size());
    out.mean_bias /= static_cast<double>(out.series.size());
  }
  return out;
}

namespace {

Vec outputs(const TwoLayerNet& net) {
  Vec out(net.in_dim());
  for (int j = 0; j < net.in_dim(); ++j) out(j) = net.forward_onehot(j);
  return out;
}

Mat weight_grad(const TwoLayerNet& net, const Vec& coef) {
  Mat g = Mat::Zero(net.width(), net.in_dim());
  for (int j = 0; j < net.in_dim(); ++j)
    if (coef(j) != 0.0) net.accumulate_onehot(j, 1.0, coef(j), g);
  return g;
}

}  // namespace

Vec NtkNets::values() const { return outputs(v); }
Vec NtkNets::slack_raw() const { return outputs(h); }
Vec NtkNets::slacks() const {
  const double shift = std::log(std::max(1.0, slack_scale));
  return slack_raw().unaryExpr([&](double y) { return slack_scale * sigmoid(y - shift); });
}
Vec NtkNets::multipliers() const { return outputs(x); }

NtkNets make_ntk_nets(const TabularMDP& mdp, int width, Rng& rng) {
  NtkNets n;
  n.v = init_net(width, mdp.n_states(), rng);
  n.h = init_net(width, mdp.n_pairs(), rng);
  n.slack_scale = (1.0 + mdp.reward().cwiseAbs().maxCoeff()) / (1.0 - mdp.gamma());
  n.x = init_net(width, mdp.n_pairs(), rng);
  return n;
}

std::vector<double> ntk_residual_track(const TabularMDP& mdp, const WeightFn& w, const NtkConfig& cfg) {
  if (!(cfg.beta > 1.0 / (4.0 * cfg.mu))) throw InputError("NTK scheme needs beta > 1/(4 mu)");
  check_weights(mdp, w);
  Rng rng(cfg.seed);
  NtkNets nets = make_ntk_nets(mdp, cfg.width, rng);
  const double mu = cfg.mu, beta = cfg.beta;
  std::vector<double> residuals;
  for (int k = 0; k < cfg.rounds; ++k) {
    const Vec x_k = nets.multipliers();
    std::array<TwoLayerNet*, 3> parts{&nets.v, &nets.h, &nets.x};
    std::array<Mat, 3> sums;
    for (std::size_t i = 0; i < 3; ++i) sums[i] = Mat::Zero(parts[i]->width(), parts[i]->in_dim());
    for (int t = 0; t < cfg.inner_steps; ++t) {
      const Vec V = nets.values(), h = nets.slacks(), x = nets.multipliers();
      const Vec Z = z_table(mdp, V, h, x_k, mu);
      const Vec gx = w.cwiseProduct(Z / (2.0 * mu) + beta * (x - Z));
      const Vec gz = w.cwiseProduct(x / (2.0 * mu) - beta * (x - Z));
      const Vec gV = mdp.rho0() + mu * gap_transpose(mdp, gz);
      // dh/df = h (1 - h / C)
      const Vec dh = h.cwiseProduct((1.0 - h.array() / nets.slack_scale).matrix());
      const std::array<Vec, 3> coefs{gV, Vec(mu * gz.cwiseProduct(dh)), gx};
      std::array<Mat, 3> grads;
      for (std::size_t i = 0; i < 3; ++i) grads[i] = weight_grad(*parts[i], coefs[i]);
      for (std::size_t i = 0; i < 3; ++i) {
        parts[i]->mutable_weights() -= cfg.lr * grads[i];
        parts[i]->project_ball(cfg.radius);
        sums[i] += parts[i]->weights();
      }
    }
    for (std::size_t i = 0; i < 3; ++i) parts[i]->mutable_weights() = sums[i] / static_cast<double>(cfg.inner_steps);
    residuals.push_back(prox_residual(mdp, w, nets.multipliers(), mu));
  }
  return residuals;
}

}  // namespace lpalm
