#include <sstream>

#include "doctest.h"
#include "lpalm/envs.hpp"
#include "lpalm/lp_oracle.hpp"
#include "test_util.hpp"

using namespace lpalm;
using testutil::one_state;

namespace {

double inf_norm(const Vec& v) { return v.lpNorm<Eigen::Infinity>(); }

/// A random MDP whose optimal action margin exceeds `gap` in every state.
TabularMDP tie_free_mdp(std::uint64_t seed, int S, int A, double gamma, double gap = 1e-3) {
  Rng rng(seed);
  for (;;) {
    TabularMDP m = random_mdp(S, A, gamma, rng);
    const Vec Q = m.q_values(value_iteration(m, 1e-13));
    bool ok = true;
    for (int s = 0; s < S && ok; ++s) {
      Vec q = Q.segment(s * A, A);
      std::sort(q.data(), q.data() + A);
      ok = q(A - 1) - q(A - 2) > gap;
    }
    if (ok) return m;
  }
}

AlmRun solve(const TabularMDP& m, double mu = 1000.0) {
  InnerOptions opt;
  opt.tol = 1e-11;
  return alm_solve(m, uniform_weights(m), mu, 200, 1e-10, opt);
}

}  // namespace

TEST_CASE("value_iteration") {
  CHECK(value_iteration(one_state(), 1e-12)(0) == doctest::Approx(2.0));
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const TabularMDP m = random_mdp(5, 3, 0.9, rng);
    const Vec V = value_iteration(m, 1e-10);
    CHECK(inf_norm(bellman_operator(m, V) - V) <= 1e-10);
    // LP constraints: V(s) >= r + gamma P V, up to the tolerance scaled by the
    // contraction.
    CHECK(constraint_gap(m, V).maxCoeff() <= 1e-10 / (1 - 0.9) + 1e-12);
  }
}

TEST_CASE("greedy_policy") {
  const TabularMDP m1 = one_state();
  CHECK(greedy_policy(m1, Vec::Zero(1)).argmax(0) == 0);

  const TabularMDP tie(1, 2, Mat::Ones(2, 1), Vec::Ones(2), Vec::Ones(1), 0.5);
  CHECK(greedy_policy(tie, Vec::Zero(1)).argmax(0) == 0);

  Rng rng(3);
  const TabularMDP m = random_mdp(4, 3, 0.9, rng);
  const Vec V = value_iteration(m, 1e-13);
  const Vec Vpi = evaluate_policy(m, greedy_policy(m, V));
  CHECK(std::abs(m.rho0().dot(Vpi) - m.rho0().dot(V)) <= 1e-8);
}

TEST_CASE("z_sample and z_function") {
  CHECK(z_value(0, 0, 1, 1, 0, 0, 0.9) == 1.0);
  CHECK(z_value(2, 1, 0.5, 1, 5, 10, 0.9) == doctest::Approx(5.0));
  CHECK(z_value(0, 0.5, 3, 1, 1 + 0.9 * 2 + 0.5, 2, 0.9) == doctest::Approx(0.0));

  const TabularMDP chain = chain_mdp(4, 0.9, 0.0);
  Rng rng(4);
  AlmState st = AlmState::zeros(chain, 2.0);
  st.V = testutil::random_vec(4, rng);
  st.h = testutil::random_vec(8, rng).cwiseAbs();
  st.x = testutil::random_vec(8, rng).cwiseAbs();
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a) {
      const int next = a == 1 ? std::min(s + 1, 3) : std::max(s - 1, 0);
      CHECK(z_function(chain, st, s, a) ==
            doctest::Approx(z_sample(chain, st, {s, a, chain.r(s, a), next, 0.0, 1})).epsilon(1e-14));
    }

  const TabularMDP m = random_mdp(3, 2, 0.9, rng);
  AlmState ms = AlmState::zeros(m, 1.5);
  ms.V = testutil::random_vec(3, rng, 3.0);
  ms.h = testutil::random_vec(6, rng).cwiseAbs();
  ms.x = testutil::random_vec(6, rng).cwiseAbs();
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const Sample smp = sample_transition(m, 1, 1, rng);
    const double z = z_sample(m, ms, {1, 1, smp.reward, smp.s_next, 0.0, 1});
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean - z_function(m, ms, 1, 1)) <= 3.0 * std::sqrt((sq / n - mean * mean) / n));

  // Affine in V along the constant direction.
  AlmState shifted = ms;
  shifted.V.array() += 0.7;
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a)
      CHECK(z_function(m, shifted, s, a) ==
            doctest::Approx(z_function(m, ms, s, a) + 1.5 * (0.9 - 1.0) * 0.7).epsilon(1e-13));

  const Vec Z = z_table(m, ms.V, ms.h, ms.x, ms.mu);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) CHECK(Z(m.pair(s, a)) == doctest::Approx(z_function(m, ms, s, a)).epsilon(1e-14));
}

TEST_CASE("augmented_lagrangian_value") {
  Rng rng(6);
  const TabularMDP m = random_mdp(3, 2, 0.9, rng);
  const Vec w = uniform_weights(m);
  for (double mu : {0.5, 1.0, 2.0}) {
    const AlmState st = AlmState::zeros(m, mu);
    const double expect = 0.5 * mu * w.dot(m.reward().cwiseProduct(m.reward()));
    CHECK(augmented_lagrangian_value(m, w, st) == doctest::Approx(expect).epsilon(1e-14));
  }
  AlmState one = AlmState::zeros(m, 1.0), two = AlmState::zeros(m, 2.0);
  CHECK(augmented_lagrangian_value(m, w, two) == doctest::Approx(2.0 * augmented_lagrangian_value(m, w, one)));
  // With Z = 0 the value is exactly rho0 . V.
  AlmState zero = AlmState::zeros(m, 1.0);
  zero.V = testutil::random_vec(3, rng);
  zero.x = -(z_table(m, zero.V, zero.h, Vec::Zero(6), 1.0));
  CHECK(augmented_lagrangian_value(m, w, zero) == doctest::Approx(m.rho0().dot(zero.V)).epsilon(1e-13));
}

TEST_CASE("alm_inner_solve stationarity") {
  const TabularMDP m = one_state();
  const Vec w = uniform_weights(m);
  InnerOptions opt;
  opt.tol = 1e-12;
  const InnerResult r = alm_inner_solve(m, w, Vec::Zero(1), 1.0, opt);
  // dL/dV = rho0 + w Z (gamma - 1) at the returned point, by central
  // differences of the Lagrangian itself.
  const auto L = [&](const Vec& V) {
    AlmState st = AlmState::zeros(m, 1.0);
    st.V = V;
    st.h = r.h;
    return augmented_lagrangian_value(m, w, st);
  };
  CHECK(std::abs(testutil::central_diff(L, r.V, 0, 1e-5)) <= 1e-8);

  Rng rng(9);
  for (InnerMethod method : {InnerMethod::Newton, InnerMethod::ProjectedGradient}) {
    const TabularMDP rm = random_mdp(4, 2, 0.9, rng);
    const Vec rw = uniform_weights(rm);
    const Vec x = testutil::random_vec(8, rng).cwiseAbs() * 5.0;
    InnerOptions o;
    o.method = method;
    o.tol = 1e-9;
    o.max_iter = 200000;
    const InnerResult res = alm_inner_solve(rm, rw, x, 2.0, o);
    CHECK(res.stationarity <= 1e-9);
    CHECK(res.h.minCoeff() >= 0.0);
    // KKT of the bound constraint, from the analytic h-gradient w Z.
    const Vec gh = rw.cwiseProduct(z_table(rm, res.V, res.h, x, 2.0));
    for (int i = 0; i < 8; ++i) {
      if (res.h(i) > 0)
        CHECK(std::abs(gh(i)) <= 1e-9);
      else
        CHECK(gh(i) >= -1e-9);
    }
  }
}

TEST_CASE("looser inner tolerance never needs more iterations") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const TabularMDP m = random_mdp(4, 2, 0.9, rng);
    const Vec w = uniform_weights(m);
    const Vec x = testutil::random_vec(8, rng).cwiseAbs();
    InnerOptions o;
    o.method = InnerMethod::ProjectedGradient;
    o.max_iter = 200000;
    int prev = 1 << 30;
    for (double tol : {1e-10, 2e-10, 4e-10, 8e-10}) {
      o.tol = tol;
      const int it = alm_inner_solve(m, w, x, 1.0, o).iterations;
      CHECK(it <= prev);
      prev = it;
    }
  }
}

TEST_CASE("inner solve reports the iteration cap") {
  Rng rng(2);
  const TabularMDP m = random_mdp(4, 2, 0.9, rng);
  InnerOptions o;
  o.method = InnerMethod::ProjectedGradient;
  o.max_iter = 2;
  o.tol = 1e-14;
  try {
    alm_inner_solve(m, uniform_weights(m), Vec::Zero(8), 1.0, o);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.achieved() > 1e-14);
  }
}

TEST_CASE("one-state ALM converges to x* = 2") {
  const TabularMDP m = one_state();
  const AlmRun run = solve(m, 1.0);
  CHECK(run.state.x(0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(run.state.V(0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(dual_residuals(m, uniform_weights(m), run.state.x).norm <= 1e-8);

  // The fixed point maps to itself.
  InnerOptions opt;
  opt.tol = 1e-12;
  const AlmState again = alm_iterate(m, uniform_weights(m), run.state, opt);
  CHECK(std::abs(again.x(0) - run.state.x(0)) <= 1e-9);
  const KktReport k = kkt_check(m, uniform_weights(m), again.V, again.h, again.x, run.state.x, 1.0);
  CHECK(k.prox <= 1e-8);
  CHECK(k.dual <= 1e-8);
  CHECK(k.nonneg == 0.0);
}

TEST_CASE("ALM on random MDPs: value, mass, slack pattern and policy") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TabularMDP m = tie_free_mdp(100 + seed, 4, 3, 0.9);
    const Vec w = uniform_weights(m);
    const Vec Vstar = value_iteration(m, 1e-13);
    const AlmRun run = solve(m);
    CHECK(inf_norm(run.state.V - Vstar) <= 1e-6);
    CHECK(std::abs(w.dot(run.state.x) - 10.0) <= 1e-3);
    CHECK(run.state.x.minCoeff() >= 0.0);
    CHECK(run.state.h.minCoeff() >= 0.0);

    const Policy greedy = greedy_policy(m, Vstar);
    const Policy recovered = policy_from_multiplier(w, run.state.x, 3);
    for (int s = 0; s < 4; ++s) {
      CHECK(recovered.argmax(s) == greedy.argmax(s));
      for (int a = 0; a < 3; ++a) {
        if (a == greedy.argmax(s))
          CHECK(run.state.h(m.pair(s, a)) <= 1e-6);
        else
          CHECK(run.state.h(m.pair(s, a)) > 1e-6);
      }
    }
  }
}

TEST_CASE("multiplier mass equals 1/(1-gamma) after every exact step") {
  const TabularMDP m = tie_free_mdp(7, 3, 2, 0.9);
  const Vec w = uniform_weights(m);
  InnerOptions opt;
  opt.tol = 1e-11;
  AlmState st = AlmState::zeros(m, 10.0);
  for (int k = 0; k < 30; ++k) {
    st = alm_iterate(m, w, st, opt);
    CHECK(std::abs(w.dot(st.x) - 10.0) <= 1e-6);
  }
}

TEST_CASE("dual_residuals") {
  Rng rng(12);
  const TabularMDP m = random_mdp(3, 2, 0.9, rng);
  const Vec w = uniform_weights(m);
  const DualResidual zero = dual_residuals(m, w, Vec::Zero(6));
  CHECK(zero.per_state == -m.rho0());
  const Vec x = testutil::random_vec(6, rng).cwiseAbs();
  const DualResidual r1 = dual_residuals(m, w, x), r2 = dual_residuals(m, w, 2.0 * x);
  CHECK(inf_norm((r2.per_state + m.rho0()) - 2.0 * (r1.per_state + m.rho0())) <= 1e-14);

  // Independent loop over the Kronecker-delta form.
  for (int sp = 0; sp < 3; ++sp) {
    double acc = -m.rho0()(sp);
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 2; ++a)
        acc += ((s == sp ? 1.0 : 0.0) - 0.9 * m.p(s, a, sp)) * w(m.pair(s, a)) * x(m.pair(s, a));
    CHECK(r1.per_state(sp) == doctest::Approx(acc).epsilon(1e-13));
  }
  CHECK(r1.norm == doctest::Approx(inf_norm(r1.per_state)));

  const KktReport k = kkt_check(m, w, Vec::Zero(3), Vec::Zero(6), x, x, 1.0);
  CHECK(k.dual == r1.norm);
  CHECK(k.nonneg == 0.0);
}

TEST_CASE("policy_from_multiplier") {
  const Vec w1 = Vec::Ones(1);
  CHECK(policy_from_multiplier(w1, Vec::Constant(1, 3.0), 1).probs()(0, 0) == 1.0);
  Vec x(2);
  x << 0.0, 3.0;
  const Policy p = policy_from_multiplier(Vec::Constant(2, 0.5), x, 2);
  CHECK(p.probs()(0, 0) == 0.0);
  CHECK(p.probs()(0, 1) == 1.0);
  const Policy u = policy_from_multiplier(Vec::Constant(2, 0.5), Vec::Zero(2), 2);
  CHECK(u.probs()(0, 0) == 0.5);
}

TEST_CASE("constraint_gap and gap_transpose are adjoint") {
  Rng rng(21);
  const TabularMDP m = random_mdp(4, 3, 0.8, rng);
  for (int i = 0; i < 20; ++i) {
    const Vec V = testutil::random_vec(4, rng), y = testutil::random_vec(12, rng);
    const Vec DV = constraint_gap(m, V) - m.reward();
    CHECK(DV.dot(y) == doctest::Approx(V.dot(gap_transpose(m, y))).epsilon(1e-12));
  }
}

TEST_CASE("oracle report round trip") {
  const TabularMDP m = chain_mdp(5, 0.9, 0.0);
  InnerOptions opt;
  const OracleReport rep = compute_oracle(m, 1e-10, 1000.0, opt, 200);
  CHECK(rep.bellman_residual <= 1e-10);
  CHECK(rep.V(0) == doctest::Approx(6.561).epsilon(1e-8));
  for (int a : rep.policy) CHECK(a == 1);
  std::stringstream ss;
  write_oracle_report(ss, rep);
  const OracleReport back = read_oracle_report(ss);
  CHECK(back.n_states == 5);
  CHECK(back.policy == rep.policy);
  CHECK(inf_norm(back.V - rep.V) == 0.0);
  CHECK(inf_norm(back.x - rep.x) == 0.0);
}
