#pragma once

#include <functional>
#include <string>

#include "lpalm/mdp.hpp"

namespace lpalm {

/// Single-product inventory with Poisson demand. Defaults are the desk-scale
/// instance (M=10, lambda=2) with the standard cost constants.
struct InventoryConfig {
  int M = 10;
  double K = 5.0;
  double c = 2.0;
  double h_cost = 2.0;
  double p = 3.0;
  double demand_lambda = 2.0;
  double gamma = 0.9;

  void validate() const;
};

struct InventoryOutcome {
  int next;
  double reward;
};

/// One day: order `a`, stock is capped at M, demand `d` is served from stock.
InventoryOutcome inventory_step(const InventoryConfig& cfg, int s, int a, int d);

/// Poisson(lambda) pmf on {0..M} with the tail mass P(D >= M) folded into M.
Vec truncated_poisson(double lambda, int M);

/// Exact tabular model: states and actions {0..M}, uniform rho0.
TabularMDP inventory_tabular(const InventoryConfig& cfg);

/// n-state chain with actions 0 = left, 1 = right (clamped at the ends).
/// Reward 1 for any action taken in the rightmost state; rho0 is uniform.
/// With probability `noise` the move goes the opposite way.
TabularMDP chain_mdp(int n, double gamma, double noise);

/// Dense random MDP: transition rows and rho0 from normalized uniforms,
/// rewards uniform on [0, 1).
TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng);

/// A trainable environment: a model-free sampler plus the exact tabular model
/// used for evaluation and oracle comparisons.
struct Environment {
  std::string name;
  TabularMDP model;
  /// Model-free sampler; when empty, transitions are drawn from `model`.
  std::function<Sample(int, int, Rng&)> sampler;
  /// Evaluation window. 0 means the discounted return rho0 . V^pi; a positive
  /// value means the expected undiscounted reward over that many steps.
  int eval_horizon = 0;
  /// Steps between episode resets in the training loops.
  int episode_length = 100;

  /// Return of `policy` under the evaluation rule above.
  double evaluate(const Policy& policy) const;
  Sample step(int s, int a, Rng& rng) const;
  /// Draws a start state from rho0.
  int reset(Rng& rng) const;
};

Environment make_inventory_env(const InventoryConfig& cfg);
Environment make_chain_env(int n, double gamma, double noise);
Environment make_tabular_env(TabularMDP mdp, std::string name = "mdp-file");

}  // namespace lpalm
