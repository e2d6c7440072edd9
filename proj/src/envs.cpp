#include "lpalm/envs.hpp"

#include <algorithm>
#include <cmath>

namespace lpalm {

void InventoryConfig::validate() const {
  if (M < 1) throw InputError("inventory M must be at least 1");
  if (K < 0 || c < 0 || h_cost < 0) throw InputError("inventory costs must be nonnegative");
  if (!(p > h_cost)) throw InputError("inventory selling price p must exceed the holding cost h");
  if (!(demand_lambda > 0)) throw InputError("inventory demand lambda must be positive");
  if (!(gamma > 0 && gamma < 1)) throw InputError("inventory gamma must lie in (0, 1)");
}

InventoryOutcome inventory_step(const InventoryConfig& cfg, int s, int a, int d) {
  if (s < 0 || s > cfg.M) throw InputError("inventory level out of range");
  if (a < 0 || a > cfg.M) throw InputError("order quantity out of range");
  if (d < 0) throw InputError("demand must be nonnegative");
  const int stock = std::min(s + a, cfg.M);
  const int next = std::max(stock - d, 0);
  const double reward = -cfg.K * (a > 0 ? 1.0 : 0.0) - cfg.c * std::max(stock - s, 0) - cfg.h_cost * s +
                        cfg.p * std::max(stock - next, 0);
  return {next, reward};
}

Vec truncated_poisson(double lambda, int M) {
  if (!(lambda > 0)) throw InputError("poisson lambda must be positive");
  if (M < 1) throw InputError("truncation level must be at least 1");
  Vec pmf(M + 1);
  // Log-space terms avoid overflow of lambda^k / k! for large lambda.
  double head = 0.0;
  for (int k = 0; k < M; ++k) {
    pmf(k) = std::exp(-lambda + k * std::log(lambda) - std::lgamma(k + 1.0));
    head += pmf(k);
  }
  pmf(M) = std::max(0.0, 1.0 - head);
  return pmf / pmf.sum();
}

TabularMDP inventory_tabular(const InventoryConfig& cfg) {
  cfg.validate();
  const int n = cfg.M + 1;
  const Vec demand = truncated_poisson(cfg.demand_lambda, cfg.M);
  Mat P = Mat::Zero(n * n, n);
  Vec r = Vec::Zero(n * n);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < n; ++a)
      for (int d = 0; d <= cfg.M; ++d) {
        const InventoryOutcome o = inventory_step(cfg, s, a, d);
        P(s * n + a, o.next) += demand(d);
        r(s * n + a) += demand(d) * o.reward;
      }
  return TabularMDP(n, n, std::move(P), std::move(r), Vec::Constant(n, 1.0 / n), cfg.gamma);
}

TabularMDP chain_mdp(int n, double gamma, double noise) {
  if (n < 2) throw InputError("chain needs at least 2 states");
  if (!(noise >= 0.0 && noise < 1.0)) throw InputError("chain noise must lie in [0, 1)");
  Mat P = Mat::Zero(2 * n, n);
  Vec r = Vec::Zero(2 * n);
  for (int s = 0; s < n; ++s) {
    const int left = std::max(s - 1, 0), right = std::min(s + 1, n - 1);
    P(2 * s + 0, left) += 1.0 - noise;
    P(2 * s + 0, right) += noise;
    P(2 * s + 1, right) += 1.0 - noise;
    P(2 * s + 1, left) += noise;
  }
  r(2 * (n - 1)) = 1.0;
  r(2 * (n - 1) + 1) = 1.0;
  return TabularMDP(n, 2, std::move(P), std::move(r), Vec::Constant(n, 1.0 / n), gamma);
}

TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  if (n_states < 1 || n_actions < 1) throw InputError("random_mdp needs positive sizes");
  const int SA = n_states * n_actions;
  Mat P(SA, n_states);
  Vec r(SA);
  for (int i = 0; i < SA; ++i) {
    for (int j = 0; j < n_states; ++j) P(i, j) = rng.uniform() + 1e-3;
    P.row(i) /= P.row(i).sum();
    r(i) = rng.uniform();
  }
  Vec rho0(n_states);
  for (int j = 0; j < n_states; ++j) rho0(j) = rng.uniform() + 1e-3;
  rho0 /= rho0.sum();
  return TabularMDP(n_states, n_actions, std::move(P), std::move(r), std::move(rho0), gamma);
}

double Environment::evaluate(const Policy& policy) const {
  if (eval_horizon > 0) return finite_horizon_return(model, policy, eval_horizon);
  return model.rho0().dot(evaluate_policy(model, policy));
}

Sample Environment::step(int s, int a, Rng& rng) const {
  if (sampler) return sampler(s, a, rng);
  return sample_transition(model, s, a, rng);
}

int Environment::reset(Rng& rng) const {
  const Vec& rho0 = model.rho0();
  return rng.categorical(std::span<const double>(rho0.data(), static_cast<std::size_t>(rho0.size())));
}

Environment make_inventory_env(const InventoryConfig& cfg) {
  cfg.validate();
  Environment env{"inventory", inventory_tabular(cfg), {}, 10, 10};
  env.sampler = [cfg](int s, int a, Rng& rng) {
    const InventoryOutcome o = inventory_step(cfg, s, a, rng.poisson(cfg.demand_lambda));
    return Sample{o.next, o.reward};
  };
  return env;
}

Environment make_tabular_env(TabularMDP mdp, std::string name) {
  return Environment{std::move(name), std::move(mdp), {}, 0, 100};
}

Environment make_chain_env(int n, double gamma, double noise) {
  Environment env = make_tabular_env(chain_mdp(n, gamma, noise), "chain");
  env.episode_length = 4 * n;
  return env;
}

}  // namespace lpalm
