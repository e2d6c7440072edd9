#include "lpalm/lp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace lpalm {

WeightFn uniform_weights(const TabularMDP& mdp) { return Vec::Constant(mdp.n_pairs(), 1.0 / mdp.n_pairs()); }

void check_weights(const TabularMDP& mdp, const WeightFn& w) {
  if (w.size() != mdp.n_pairs()) throw InputError("weight table must have n_states*n_actions entries");
  if ((w.array() < 0.0).any() || !w.allFinite()) throw InputError("weights must be nonnegative");
  if (std::abs(w.sum() - 1.0) > 1e-12) throw InputError("weights must sum to 1");
}

AlmState AlmState::zeros(const TabularMDP& mdp, double mu) {
  if (!(mu > 0)) throw InputError("mu must be positive");
  AlmState st;
  st.V = Vec::Zero(mdp.n_states());
  st.h = Vec::Zero(mdp.n_pairs());
  st.x = Vec::Zero(mdp.n_pairs());
  st.mu = mu;
  return st;
}

Vec value_iteration(const TabularMDP& mdp, double tol, int max_iter) {
  if (!(tol > 0)) throw InputError("value_iteration tol must be positive");
  Vec V = Vec::Zero(mdp.n_states());
  for (int it = 0; it < max_iter; ++it) {
    Vec TV = bellman_operator(mdp, V);
    const double res = (TV - V).lpNorm<Eigen::Infinity>();
    if (res <= tol) return V;
    V = std::move(TV);
  }
  throw ConvergenceError("value_iteration hit its iteration cap",
                         (bellman_operator(mdp, V) - V).lpNorm<Eigen::Infinity>());
}

Policy greedy_policy(const TabularMDP& mdp, const Vec& V) {
  const Vec q = mdp.q_values(V);
  const int A = mdp.n_actions();
  std::vector<int> actions(static_cast<std::size_t>(mdp.n_states()));
  for (int s = 0; s < mdp.n_states(); ++s) {
    int best = 0;
    for (int a = 1; a < A; ++a)
      if (q(s * A + a) > q(s * A + best)) best = a;
    actions[static_cast<std::size_t>(s)] = best;
  }
  return Policy::deterministic(actions, A);
}

double z_sample(const TabularMDP& mdp, const AlmState& st, const TransitionTuple& t) {
  mdp.check_state(t.s);
  mdp.check_action(t.a);
  mdp.check_state(t.s_next);
  const int sa = mdp.pair(t.s, t.a);
  return z_value(st.x(sa), st.h(sa), st.mu, t.r, st.V(t.s), st.V(t.s_next), std::pow(mdp.gamma(), t.steps));
}

double z_function(const TabularMDP& mdp, const AlmState& st, int s, int a) {
  mdp.check_state(s);
  mdp.check_action(a);
  const int sa = mdp.pair(s, a);
  const double ev = mdp.transition().row(sa).dot(st.V);
  return z_value(st.x(sa), st.h(sa), st.mu, mdp.reward()(sa), st.V(s), ev, mdp.gamma());
}

Vec constraint_gap(const TabularMDP& mdp, const Vec& V) {
  Vec c = mdp.q_values(V);
  const int A = mdp.n_actions();
  for (int s = 0; s < mdp.n_states(); ++s) c.segment(s * A, A).array() -= V(s);
  return c;
}

Vec gap_transpose(const TabularMDP& mdp, const Vec& y) {
  Vec out = mdp.gamma() * (mdp.transition().transpose() * y);
  const int A = mdp.n_actions();
  for (int s = 0; s < mdp.n_states(); ++s) out(s) -= y.segment(s * A, A).sum();
  return out;
}

namespace {

void check_alm_inputs(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu) {
  check_weights(mdp, w);
  if (x.size() != mdp.n_pairs()) throw InputError("multiplier table must have n_states*n_actions entries");
  if (!(mu > 0)) throw InputError("mu must be positive");
}

struct Reduced {
  double value;
  Vec grad;
  Vec u;  // x + mu c
};

/// min over h >= 0 of L_mu(V, h, x), with gradient in V.
Reduced reduced_objective(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu, const Vec& V,
                          double lin) {
  Reduced out;
  out.u = x + mu * constraint_gap(mdp, V);
  const Vec pos = out.u.cwiseMax(0.0);
  out.value = lin * mdp.rho0().dot(V) + pos.cwiseProduct(pos).dot(w) / (2.0 * mu);
  out.grad = lin * mdp.rho0() + gap_transpose(mdp, w.cwiseProduct(pos));
  return out;
}

Vec slack_from(const Vec& u, double mu) { return (-u / mu).cwiseMax(0.0); }

InnerResult newton_solve(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu,
                         const InnerOptions& opt, Vec V) {
  const int S = mdp.n_states(), A = mdp.n_actions();
  const double gamma = mdp.gamma();
  const double h_scale = mu * w.maxCoeff();
  Reduced cur = reduced_objective(mdp, w, x, mu, V, opt.linear_scale);
  for (int it = 0; it < opt.max_iter; ++it) {
    const double gnorm = cur.grad.lpNorm<Eigen::Infinity>();
    if (gnorm <= opt.tol) return {V, slack_from(cur.u, mu), gnorm, it};

    // Generalized Hessian mu D^T diag(w 1{u > 0}) D, with a gradient-scaled
    // Levenberg shift that keeps it invertible away from the solution.
    Mat H = Mat::Zero(S, S);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const int sa = s * A + a;
        if (cur.u(sa) <= 0.0) continue;
        Vec d = gamma * mdp.transition().row(sa).transpose();
        d(s) -= 1.0;
        H.noalias() += (mu * w(sa)) * d * d.transpose();
      }
    H.diagonal().array() += h_scale * (1e-12 + 1e-4 * std::min(1.0, gnorm));
    Vec dir = -H.ldlt().solve(cur.grad);
    double slope = cur.grad.dot(dir);
    if (!(slope < 0.0) || !dir.allFinite()) {
      dir = -cur.grad;
      slope = -cur.grad.squaredNorm();
    }

    double t = 1.0;
    Reduced next;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      next = reduced_objective(mdp, w, x, mu, V + t * dir, opt.linear_scale);
      const double slack = 1e-14 * (1.0 + std::abs(cur.value));
      if (next.value <= cur.value + 1e-4 * t * slope + slack) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // Near the solution the decrease is below rounding in the function
      // value; fall back to the gradient norm for the full step.
      t = 1.0;
      next = reduced_objective(mdp, w, x, mu, V + dir, opt.linear_scale);
      if (!(next.grad.lpNorm<Eigen::Infinity>() < gnorm)) break;
    }
    V += t * dir;
    cur = std::move(next);
  }
  const double gnorm = cur.grad.lpNorm<Eigen::Infinity>();
  if (gnorm <= opt.tol) return {V, slack_from(cur.u, mu), gnorm, opt.max_iter};
  throw ConvergenceError("alm_inner_solve (newton) stalled before reaching tolerance", gnorm);
}

InnerResult projected_gradient_solve(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu,
                                     const InnerOptions& opt, Vec V) {
  Vec h = Vec::Zero(mdp.n_pairs());
  double step = 1.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    const double stat = inner_stationarity(mdp, w, x, mu, V, h, opt.linear_scale);
    if (stat <= opt.tol) return {V, h, stat, it};
    const Vec Z = x + mu * (h + constraint_gap(mdp, V));
    const Vec gV = opt.linear_scale * mdp.rho0() + gap_transpose(mdp, w.cwiseProduct(Z));
    const Vec gh = w.cwiseProduct(Z);
    step = std::min(step * 2.0, 1e6);
    for (int ls = 0; ls < 80; ++ls) {
      const Vec dV = -step * gV;
      const Vec dh = (h - step * gh).cwiseMax(0.0) - h;
      // The objective is quadratic, so its change along (dV, dh) is exact
      // without differencing two nearly equal values.
      const Vec dZ = mu * (dh + constraint_gap(mdp, dV) - mdp.reward());
      const double change = gV.dot(dV) + gh.dot(dh) + dZ.cwiseProduct(dZ).dot(w) / (2.0 * mu);
      const double decrease = (dV.squaredNorm() + dh.squaredNorm()) / (2.0 * step);
      if (change <= -decrease) {
        V += dV;
        h += dh;
        break;
      }
      step *= 0.5;
    }
  }
  const double stat = inner_stationarity(mdp, w, x, mu, V, h, opt.linear_scale);
  if (stat <= opt.tol) return {V, h, stat, opt.max_iter};
  throw ConvergenceError("alm_inner_solve (projected gradient) hit its iteration cap", stat);
}

}  // namespace

Vec z_table(const TabularMDP& mdp, const Vec& V, const Vec& h, const Vec& x, double mu) {
  return x + mu * (h + constraint_gap(mdp, V));
}

double augmented_lagrangian_value(const TabularMDP& mdp, const WeightFn& w, const AlmState& st) {
  const Vec Z = z_table(mdp, st.V, st.h, st.x, st.mu);
  return mdp.rho0().dot(st.V) + Z.cwiseProduct(Z).dot(w) / (2.0 * st.mu);
}

double inner_stationarity(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu, const Vec& V,
                          const Vec& h, double linear_scale) {
  const Vec Z = z_table(mdp, V, h, x, mu);
  const Vec gh = w.cwiseProduct(Z);
  const double gV = (linear_scale * mdp.rho0() + gap_transpose(mdp, gh)).lpNorm<Eigen::Infinity>();
  double gH = 0.0;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    gH = std::max(gH, h(i) > 0.0 ? std::abs(gh(i)) : std::max(0.0, -gh(i)));
  return std::max(gV, gH);
}

InnerResult alm_inner_solve(const TabularMDP& mdp, const WeightFn& w, const Vec& x, double mu,
                            const InnerOptions& opt, const Vec& V0) {
  check_alm_inputs(mdp, w, x, mu);
  if (!(opt.tol > 0)) throw InputError("inner tolerance must be positive");
  Vec V = V0.size() == 0 ? Vec::Zero(mdp.n_states()) : V0;
  if (V.size() != mdp.n_states()) throw InputError("warm start has the wrong length");
  if (opt.method == InnerMethod::Newton) return newton_solve(mdp, w, x, mu, opt, std::move(V));
  return projected_gradient_solve(mdp, w, x, mu, opt, std::move(V));
}

AlmState alm_iterate(const TabularMDP& mdp, const WeightFn& w, const AlmState& st, const InnerOptions& opt) {
  const InnerResult in = alm_inner_solve(mdp, w, st.x, st.mu, opt, st.V);
  AlmState next;
  next.mu = st.mu;
  next.iteration = st.iteration + 1;
  next.V = in.V;
  next.h = in.h;
  next.x = z_table(mdp, in.V, in.h, st.x, st.mu);
  next.clamped = std::max(0.0, -next.x.minCoeff());
  next.x = next.x.cwiseMax(0.0);
  next.inner_stationarity = in.stationarity;
  next.inner_iterations = in.iterations;
  return next;
}

AlmRun alm_solve(const TabularMDP& mdp, const WeightFn& w, double mu, int max_outer, double outer_tol,
                 const InnerOptions& opt) {
  AlmRun run{AlmState::zeros(mdp, mu), 0, 0.0};
  for (int k = 0; k < max_outer; ++k) {
    AlmState next = alm_iterate(mdp, w, run.state, opt);
    run.last_change = (next.x - run.state.x).lpNorm<Eigen::Infinity>();
    run.state = std::move(next);
    run.outer_iterations = k + 1;
    if (run.last_change <= outer_tol) break;
  }
  return run;
}

DualResidual dual_residuals(const TabularMDP& mdp, const WeightFn& w, const Vec& x) {
  check_weights(mdp, w);
  if (x.size() != mdp.n_pairs()) throw InputError("multiplier table must have n_states*n_actions entries");
  // sum_{s,a} (delta_{s'}(s) - gamma P(s'|s,a)) y(s,a) = -(D^T y)(s').
  DualResidual out;
  out.per_state = -gap_transpose(mdp, w.cwiseProduct(x)) - mdp.rho0();
  out.norm = out.per_state.lpNorm<Eigen::Infinity>();
  return out;
}

Policy policy_from_multiplier(const WeightFn& w, const Vec& x, int n_actions) {
  if (n_actions < 1 || w.size() != x.size() || w.size() % n_actions != 0)
    throw InputError("weight and multiplier tables must match the action count");
  const auto S = w.size() / n_actions;
  Mat probs(S, n_actions);
  for (Eigen::Index s = 0; s < S; ++s) {
    double mass = 0.0;
    for (int a = 0; a < n_actions; ++a) {
      const double m = std::max(0.0, w(s * n_actions + a) * x(s * n_actions + a));
      probs(s, a) = m;
      mass += m;
    }
    if (mass > 0.0) probs.row(s) /= mass;
    else probs.row(s).setConstant(1.0 / n_actions);
  }
  return Policy(std::move(probs));
}

KktReport kkt_check(const TabularMDP& mdp, const WeightFn& w, const Vec& V, const Vec& h, const Vec& x,
                    const Vec& x_prev, double mu) {
  check_alm_inputs(mdp, w, x, mu);
  if (V.size() != mdp.n_states() || h.size() != mdp.n_pairs() || x_prev.size() != mdp.n_pairs())
    throw InputError("kkt_check shapes do not match the MDP");
  KktReport rep;
  rep.prox = (x - z_table(mdp, V, h, x_prev, mu)).lpNorm<Eigen::Infinity>();
  rep.dual = dual_residuals(mdp, w, x).norm;
  rep.nonneg = std::max({0.0, -x.minCoeff(), -h.minCoeff()});
  return rep;
}

OracleReport compute_oracle(const TabularMDP& mdp, double vi_tol, double mu, const InnerOptions& opt,
                            int max_outer) {
  OracleReport rep;
  rep.n_states = mdp.n_states();
  rep.n_actions = mdp.n_actions();
  rep.gamma = mdp.gamma();
  rep.V = value_iteration(mdp, vi_tol);
  rep.bellman_residual = (bellman_operator(mdp, rep.V) - rep.V).lpNorm<Eigen::Infinity>();
  const WeightFn w = uniform_weights(mdp);
  const AlmRun run = alm_solve(mdp, w, mu, max_outer, 1e-12, opt);
  rep.x = run.state.x;
  rep.dual_residual = dual_residuals(mdp, w, rep.x).norm;
  const Policy pi = greedy_policy(mdp, rep.V);
  for (int s = 0; s < mdp.n_states(); ++s) rep.policy.push_back(pi.argmax(s));
  return rep;
}

namespace {

constexpr const char* kOracleHeader = "# lpalm oracle report v1";

void put_list(std::ostream& out, const char* key, const Vec& v) {
  out << key;
  char buf[40];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, " %.17g", v(i));
    out << buf;
  }
  out << '\n';
}

void put_scalar(std::ostream& out, const char* key, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << key << ' ' << buf << '\n';
}

}  // namespace

void write_oracle_report(std::ostream& out, const OracleReport& rep) {
  out << kOracleHeader << '\n';
  out << "n_states " << rep.n_states << '\n';
  out << "n_actions " << rep.n_actions << '\n';
  put_scalar(out, "gamma", rep.gamma);
  put_scalar(out, "bellman_residual", rep.bellman_residual);
  put_scalar(out, "dual_residual", rep.dual_residual);
  put_list(out, "V", rep.V);
  put_list(out, "x", rep.x);
  out << "policy";
  for (int a : rep.policy) out << ' ' << a;
  out << '\n';
}

OracleReport read_oracle_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kOracleHeader) throw InputError("not an oracle report");
  OracleReport rep;
  auto read_vec = [](std::istringstream& ls) {
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    return Vec(Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size())));
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "n_states") ls >> rep.n_states;
    else if (key == "n_actions") ls >> rep.n_actions;
    else if (key == "gamma") ls >> rep.gamma;
    else if (key == "bellman_residual") ls >> rep.bellman_residual;
    else if (key == "dual_residual") ls >> rep.dual_residual;
    else if (key == "V") rep.V = read_vec(ls);
    else if (key == "x") rep.x = read_vec(ls);
    else if (key == "policy") {
      int a;
      while (ls >> a) rep.policy.push_back(a);
    } else throw InputError("unknown oracle report field " + key);
  }
  if (rep.V.size() != rep.n_states || rep.x.size() != rep.n_states * rep.n_actions ||
      static_cast<int>(rep.policy.size()) != rep.n_states)
    throw InputError("oracle report arrays have the wrong length");
  return rep;
}

}  // namespace lpalm
