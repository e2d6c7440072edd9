#include <cmath>

#include "doctest.h"
#include "lpalm/envs.hpp"
#include "lpalm/lp_oracle.hpp"

using namespace lpalm;

namespace {

InventoryConfig small_inventory() {
  InventoryConfig c;
  c.M = 10;
  return c;
}

/// Revenue formula written out term by term.
double revenue(const InventoryConfig& c, int s, int a, int d) {
  const int stocked = std::min(s + a, c.M);
  const int next = std::max(stocked - d, 0);
  return -c.K * (a > 0) - c.c * std::max(stocked - s, 0) - c.h_cost * s + c.p * std::max(stocked - next, 0);
}

}  // namespace

TEST_CASE("inventory_step by hand") {
  const InventoryConfig c = small_inventory();
  const auto o = inventory_step(c, 5, 3, 2);
  CHECK(o.next == 6);
  CHECK(o.reward == doctest::Approx(-5 - 6 - 10 + 6));
  for (int d : {0, 1, 7, 50}) {
    const auto z = inventory_step(c, 0, 0, d);
    CHECK(z.next == 0);
    CHECK(z.reward == 0.0);
  }
  const auto hold = inventory_step(c, 4, 0, 0);
  CHECK(hold.next == 4);
  CHECK(hold.reward == doctest::Approx(-8.0));
  CHECK_THROWS_AS(inventory_step(c, 11, 0, 0), InputError);
  CHECK_THROWS_AS(inventory_step(c, 0, -1, 0), InputError);
}

TEST_CASE("inventory_step stays in range and matches the revenue formula") {
  const InventoryConfig c = small_inventory();
  for (int s = 0; s <= c.M; ++s)
    for (int a = 0; a <= c.M; ++a)
      for (int d = 0; d <= 2 * c.M; ++d) {
        const auto o = inventory_step(c, s, a, d);
        CHECK(o.next >= 0);
        CHECK(o.next <= c.M);
        CHECK(o.reward == doctest::Approx(revenue(c, s, a, d)));
      }
}

TEST_CASE("inventory config validation") {
  InventoryConfig c;
  c.p = c.h_cost;
  CHECK_THROWS(c.validate());
  c = InventoryConfig{};
  c.M = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("truncated_poisson") {
  const Vec p8 = truncated_poisson(8.0, 10);
  CHECK(p8.size() == 11);
  CHECK(p8(0) == doctest::Approx(3.3546e-4).epsilon(1e-4));
  CHECK(p8(3) == doctest::Approx(std::exp(-8.0) * 512.0 / 6.0).epsilon(1e-12));
  double head = 0.0;
  for (int k = 0; k < 10; ++k) head += p8(k);
  CHECK(p8(10) == doctest::Approx(1.0 - head).epsilon(1e-12));
  for (double lam : {0.5, 2.0, 8.0, 30.0}) CHECK(std::abs(truncated_poisson(lam, 10).sum() - 1.0) <= 1e-12);
  CHECK(truncated_poisson(1e-9, 5)(0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("inventory_tabular is row stochastic with uniform rho0") {
  const TabularMDP m = inventory_tabular(small_inventory());
  CHECK(m.n_states() == 11);
  CHECK(m.n_actions() == 11);
  for (int i = 0; i < m.n_pairs(); ++i) CHECK(std::abs(m.transition().row(i).sum() - 1.0) <= 1e-12);
  for (int s = 0; s < 11; ++s) CHECK(m.rho0()(s) == doctest::Approx(1.0 / 11.0));
}

TEST_CASE("inventory_tabular rewards match a Monte-Carlo average within 3 sigma") {
  const InventoryConfig c = small_inventory();
  const TabularMDP m = inventory_tabular(c);
  Rng rng(17);
  const int n = 1000000;
  for (auto [s, a] : {std::pair{5, 3}, std::pair{0, 10}, std::pair{9, 0}}) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = inventory_step(c, s, a, rng.poisson(c.demand_lambda)).reward;
      sum += r;
      sq += r * r;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(sq / n - mean * mean, 0.0) / n);
    CHECK(std::abs(mean - m.r(s, a)) <= 3.0 * sd + 1e-12);
  }
}

TEST_CASE("inventory with vanishing demand is deterministic") {
  InventoryConfig c;
  c.M = 2;
  c.demand_lambda = 1e-9;
  const TabularMDP m = inventory_tabular(c);
  for (int s = 0; s <= 2; ++s)
    for (int a = 0; a <= 2; ++a) CHECK(m.p(s, a, std::min(s + a, 2)) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("never ordering from empty stock returns exactly zero") {
  const TabularMDP m = inventory_tabular(small_inventory());
  CHECK(m.p(0, 0, 0) == 1.0);
  CHECK(m.r(0, 0) == 0.0);
  Vec rho = Vec::Zero(11);
  rho(0) = 1.0;
  const TabularMDP from_empty(11, 11, m.transition(), m.reward(), rho, m.gamma());
  std::vector<int> zero(11, 0);
  const Policy never = Policy::deterministic(zero, 11);
  Rng rng(1);
  CHECK(discounted_return(rollout(from_empty, never, 200, rng).tuples, m.gamma()) == 0.0);
  CHECK(std::abs(evaluate_policy(m, never)(0)) <= 1e-12);
}

TEST_CASE("chain_mdp") {
  const TabularMDP det = chain_mdp(5, 0.9, 0.0);
  for (int i = 0; i < det.n_pairs(); ++i) CHECK(det.transition().row(i).maxCoeff() == 1.0);
  CHECK(det.p(0, 0, 0) == 1.0);
  CHECK(det.p(4, 1, 4) == 1.0);
  CHECK(det.p(2, 1, 3) == 1.0);
  CHECK(det.r(4, 0) == 1.0);
  CHECK(det.r(3, 1) == 0.0);

  const TabularMDP half = chain_mdp(5, 0.9, 0.5);
  CHECK(half.p(2, 1, 3) == doctest::Approx(0.5));
  CHECK(half.p(2, 1, 1) == doctest::Approx(0.5));
  CHECK(half.p(2, 0, 1) == doctest::Approx(0.5));

  const TabularMDP two = chain_mdp(2, 0.5, 0.0);
  const Vec V = value_iteration(two, 1e-12);
  CHECK(V(1) == doctest::Approx(2.0));
  CHECK(V(0) == doctest::Approx(1.0));
  CHECK((bellman_operator(two, V) - V).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK_THROWS_AS(chain_mdp(1, 0.9, 0.0), InputError);
}

TEST_CASE("environment sampler and evaluation windows") {
  const Environment inv = make_inventory_env(small_inventory());
  CHECK(inv.eval_horizon == 10);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const int s = inv.reset(rng);
    const Sample x = inv.step(s, rng.uniform_int(11), rng);
    CHECK(x.s_next >= 0);
    CHECK(x.s_next <= 10);
  }
  const Environment chain = make_chain_env(5, 0.9, 0.0);
  std::vector<int> right(5, 1);
  const Policy pi = Policy::deterministic(right, 2);
  CHECK(chain.evaluate(pi) == doctest::Approx(chain.model.rho0().dot(evaluate_policy(chain.model, pi))));
}
