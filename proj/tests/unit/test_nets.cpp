#include <sstream>

#include "doctest.h"
#include "lpalm/nets.hpp"
#include "test_util.hpp"

using namespace lpalm;

namespace {

/// Smallest |W_i . in| over units; finite differences need it well above h.
double margin(const TwoLayerNet& net, const Vec& in) { return (net.weights() * in).cwiseAbs().minCoeff(); }

Vec flatten(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

/// Central difference of a scalar function of one head's weights.
Mat numeric_grad(NetBundle& b, Head h, const std::function<double(const NetBundle&)>& f, double step) {
  Mat& W = b.head(h).mutable_weights();
  Mat g(W.rows(), W.cols());
  for (Eigen::Index i = 0; i < W.size(); ++i) {
    const double w0 = W.data()[i];
    W.data()[i] = w0 + step;
    const double fp = f(b);
    W.data()[i] = w0 - step;
    const double fm = f(b);
    W.data()[i] = w0;
    g.data()[i] = (fp - fm) / (2 * step);
  }
  return g;
}

double mat_rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12}); }

BundleShape shape(int S, int A, int width) {
  BundleShape s;
  s.n_states = S;
  s.n_actions = A;
  s.width = width;
  s.slack_scale = 3.0;
  s.slack_shift = std::log(3.0);
  s.value_scale = 2.0;
  s.mass_scale = 1.5;
  return s;
}

}  // namespace

TEST_CASE("init_net") {
  Rng a(5), b(5);
  CHECK(init_net(8, 3, a) == init_net(8, 3, b));

  Rng rng(1);
  const TwoLayerNet big = init_net(10000, 4, rng);
  for (int c = 0; c < 4; ++c) {
    const Vec col = big.weights().col(c);
    const double var = (col.array() - col.mean()).square().sum() / (col.size() - 1);
    CHECK(std::abs(var - 0.25) <= 0.025);
  }
  CHECK(big.out_sign().cwiseAbs() == Vec::Ones(10000));
  CHECK(big.out_sign().minCoeff() == -1.0);
  CHECK(big.scale() == doctest::Approx(0.01));
  CHECK(init_net(16, 3, rng, true).out_sign() == Vec::Ones(16));
}

TEST_CASE("forward") {
  TwoLayerNet one(Vec::Ones(1), Mat::Ones(1, 1));
  CHECK(one.forward(Vec::Ones(1)) == 1.0);
  CHECK(one.forward(-Vec::Ones(1)) == 0.0);

  Rng rng(2);
  const TwoLayerNet net = init_net(32, 5, rng);
  const Vec in = testutil::random_vec(5, rng);
  Vec h = net.weights() * in;
  double expect = 0.0;
  for (int i = 0; i < 32; ++i) expect += net.out_sign()(i) * std::max(0.0, h(i));
  CHECK(net.forward(in) == doctest::Approx(expect / std::sqrt(32.0)).epsilon(1e-14));
  CHECK(net.forward(2.0 * in) == doctest::Approx(2.0 * net.forward(in)).epsilon(1e-14));

  for (int j = 0; j < 5; ++j) {
    Vec e = Vec::Zero(5);
    e(j) = 0.7;
    CHECK(net.forward_onehot(j, 0.7) == doctest::Approx(net.forward(e)).epsilon(1e-14));
  }
}

TEST_CASE("tagged and coded inputs") {
  Rng rng(3);
  const TwoLayerNet tagged = init_net(16, 5, rng);
  for (int j = 0; j < 4; ++j) {
    Vec e = Vec::Zero(5);
    e(j) = M_SQRT1_2;
    e(4) = M_SQRT1_2;
    CHECK(e.norm() == doctest::Approx(1.0));
    CHECK(tagged.forward_tagged(j) == doctest::Approx(tagged.forward(e)).epsilon(1e-14));
    CHECK(tagged.forward_code(j, 4) == tagged.forward_tagged(j));
    Mat g = Mat::Zero(16, 5);
    tagged.accumulate_code(j, 4, 0.3, g);
    CHECK(mat_rel_err(g, 0.3 * tagged.grad(e)) <= 1e-14);
  }
  const TwoLayerNet plain = init_net(16, 4, rng);
  for (int j = 0; j < 4; ++j) {
    CHECK(plain.forward_code(j, 4) == plain.forward_onehot(j));
    Mat g = Mat::Zero(16, 4);
    plain.accumulate_code(j, 4, -2.0, g);
    Vec e = Vec::Zero(4);
    e(j) = 1.0;
    CHECK(mat_rel_err(g, -2.0 * plain.grad(e)) <= 1e-14);
  }
}

TEST_CASE("grad matches finite differences and is bounded by 1") {
  Rng rng(4);
  int tested = 0;
  for (int probe = 0; probe < 100; ++probe) {
    TwoLayerNet net = init_net(8, 4, rng);
    Vec in = testutil::random_vec(4, rng);
    in /= std::max(1.0, in.norm());
    const Mat g = net.grad(in);
    CHECK(g.norm() <= 1.0 + 1e-12);
    for (int i = 0; i < 8; ++i)
      if (net.weights().row(i).dot(in) < 0) CHECK(g.row(i).norm() == 0.0);
    if (margin(net, in) < 1e-3) continue;
    ++tested;
    Mat num(8, 4);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 4; ++c) {
        Mat& W = net.mutable_weights();
        const double w0 = W(r, c);
        W(r, c) = w0 + 1e-5;
        const double fp = net.forward(in);
        W(r, c) = w0 - 1e-5;
        const double fm = net.forward(in);
        W(r, c) = w0;
        num(r, c) = (fp - fm) / 2e-5;
      }
    CHECK(mat_rel_err(g, num) <= 1e-5);
  }
  CHECK(tested >= 50);
}

TEST_CASE("bundle head gradients match finite differences") {
  Rng rng(6);
  int probes = 0;
  for (int trial = 0; trial < 100; ++trial) {
    NetBundle b = NetBundle::create(shape(3, 2, 6), rng);
    const int s = rng.uniform_int(3), a = rng.uniform_int(2);
    const double coef = 2.0 * rng.uniform() - 1.0;
    // Skip draws with a unit near its ReLU kink for any touched input.
    bool safe = true;
    for (int h = 0; h < kNumHeads && safe; ++h) {
      const TwoLayerNet& net = b.head(static_cast<Head>(h));
      const int n_codes = h == kValue || h == kMass ? 3 : 6;
      for (int j = 0; j < n_codes; ++j) {
        const double code_val = net.in_dim() > n_codes ? M_SQRT1_2 : 1.0;
        Vec in = Vec::Zero(net.in_dim());
        in(j) = code_val;
        if (net.in_dim() > n_codes) in(n_codes) = M_SQRT1_2;
        safe = safe && margin(net, in) > 1e-3;
      }
    }
    if (!safe) continue;
    ++probes;

    auto c = b.zero_coefs();
    b.add_value_grad(s, coef, c);
    b.add_slack_grad(s, a, coef, c);
    b.add_multiplier_grad(s, a, coef, c);
    const HeadGrads g = b.weight_grads(c);

    const auto v = [&](const NetBundle& nb) { return coef * nb.value(s); };
    const auto h = [&](const NetBundle& nb) { return coef * nb.slack(s, a); };
    const auto x = [&](const NetBundle& nb) { return coef * nb.x(s, a); };
    CHECK(mat_rel_err(g[kValue], numeric_grad(b, kValue, v, 1e-6)) <= 1e-5);
    CHECK(mat_rel_err(g[kSlack], numeric_grad(b, kSlack, h, 1e-6)) <= 1e-5);
    CHECK(mat_rel_err(g[kLogits], numeric_grad(b, kLogits, x, 1e-6)) <= 1e-5);
    CHECK(mat_rel_err(g[kMass], numeric_grad(b, kMass, x, 1e-6)) <= 1e-5);
  }
  CHECK(probes >= 20);
}

TEST_CASE("multiplier and slack heads") {
  Rng rng(7);
  const NetBundle b = NetBundle::create(shape(4, 3, 16), rng);
  for (int s = 0; s < 4; ++s) {
    const MultiplierOut m = b.multiplier(s);
    CHECK(m.x.sum() == doctest::Approx(m.mass).epsilon(1e-14));
    CHECK(m.mass > 0.0);
    CHECK(m.x.minCoeff() > 0.0);
    for (int a = 0; a < 3; ++a) {
      CHECK(b.slack(s, a) >= 0.0);
      CHECK(b.slack(s, a) <= 3.0);
    }
  }
  NetBundle flat = b;
  flat.x_net.mutable_weights().setZero();
  const MultiplierOut u = flat.multiplier(1);
  for (int a = 0; a < 3; ++a) CHECK(u.probs(a) == doctest::Approx(1.0 / 3.0));

  NetBundle none = b;
  none.shape.slack_scale = 0.0;
  for (int s = 0; s < 4; ++s) CHECK(none.slack_all(s).isZero());
}

TEST_CASE("continuous multiplier density") {
  Rng rng(8);
  const NetBundle b = NetBundle::create(shape(3, 1, 16), rng);
  const double a_bar = 2.0, sigma = 0.3;
  for (int s = 0; s < 3; ++s) {
    const int n = 10000;
    const double da = 2.0 * a_bar / n;
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
      const double a = -a_bar + (i + 0.5) * da;
      const double d = b.multiplier_density(s, std::atanh(a / a_bar), sigma, a_bar);
      CHECK(d >= 0.0);
      integral += d * da;
    }
    CHECK(integral == doctest::Approx(b.multiplier(s).mass).epsilon(1e-3));
  }
  NetBundle centered = b;
  centered.mean_head.mutable_weights().setZero();
  const double at0 = centered.multiplier_density(0, 0.0, sigma, a_bar);
  for (double u : {-0.5, -0.1, 0.1, 0.5}) CHECK(centered.multiplier_density(0, u, sigma, a_bar) < at0);
  CHECK_THROWS_AS(b.multiplier_density(0, 0.0, 0.0, a_bar), InputError);
}

TEST_CASE("adam_step") {
  Mat w = Mat::Constant(2, 2, 0.5);
  OptState opt = OptState::like(w, 0.1, 100);
  adam_step(opt, w, Mat::Zero(2, 2));
  CHECK(w == Mat::Constant(2, 2, 0.5));

  Mat s = Mat::Zero(1, 1);
  OptState o1 = OptState::like(s, 0.01, 1000);
  // Hand recursion with g = 1: m_t = 1 - b1^t and v_t = 1 - b2^t, so the
  // bias-corrected ratio is 1 and each step moves by lr_t / (1 + eps).
  double expect = 0.0;
  for (int t = 0; t < 3; ++t) {
    expect -= 0.01 * (1.0 - t / 1000.0) / (1.0 + 1e-8);
    adam_step(o1, s, Mat::Ones(1, 1));
    CHECK(s(0, 0) == doctest::Approx(expect).epsilon(1e-12));
  }

  Mat frozen = Mat::Ones(1, 1);
  OptState o2 = OptState::like(frozen, 0.1, 2);
  o2.step_count = 2;
  CHECK(o2.current_lr() == 0.0);
  adam_step(o2, frozen, Mat::Ones(1, 1));
  CHECK(frozen(0, 0) == 1.0);
}

TEST_CASE("clip_local") {
  HeadGrads g;
  g[0] = Mat::Constant(1, 4, 1.0);   // norm 2
  g[1] = Mat::Constant(1, 1, 0.5);   // norm 0.5
  g[2] = Mat::Zero(2, 2);
  g[3] = Mat::Constant(1, 1, -3.0);
  clip_local(g);
  CHECK(g[0] == Mat::Constant(1, 4, 0.5));
  CHECK(g[1](0, 0) == 0.5);
  CHECK(g[2].isZero());
  CHECK(g[3](0, 0) == doctest::Approx(-1.0));
}

TEST_CASE("project_ball") {
  Rng rng(9);
  TwoLayerNet net = init_net(4, 3, rng);
  const Mat W0 = net.init_weights();
  const Mat dir = Mat::Constant(4, 3, 1.0 / std::sqrt(12.0));
  net.mutable_weights() = W0 + 0.5 * dir;
  net.project_ball(1.0);
  CHECK(net.weights() == W0 + 0.5 * dir);

  net.mutable_weights() = W0 + 2.0 * dir;
  net.project_ball(1.0);
  CHECK((net.weights() - (W0 + dir)).norm() <= 1e-14);
  CHECK(net.distance_from_init() <= 1.0 + 1e-12);
  const Mat once = net.weights();
  net.project_ball(1.0);
  CHECK(net.weights() == once);

  for (int i = 0; i < 50; ++i) {
    net.mutable_weights() = W0 + testutil::random_vec(12, rng, 10.0).reshaped(4, 3);
    net.project_ball(0.3);
    CHECK(net.distance_from_init() <= 0.3 + 1e-12);
  }
}

TEST_CASE("sync_target") {
  Rng rng(10);
  NetBundle b = NetBundle::create(shape(3, 2, 8), rng);
  b.v_net.mutable_weights().array() += 0.1;
  b.x_net.mutable_weights().array() -= 0.1;
  b.x_state_head.mutable_weights().array() += 0.2;
  b.sync_target();
  for (int s = 0; s < 3; ++s) {
    CHECK(b.value_target(s) == b.value(s));
    CHECK(b.multiplier_target(s).x == b.multiplier(s).x);
  }
  const NetBundle snap = b;
  b.sync_target();
  CHECK(b.v_target == snap.v_target);
  CHECK(b.x_target == snap.x_target);
  b.v_net.mutable_weights().array() += 1.0;
  CHECK(b.v_target == snap.v_target);
  CHECK(b.value_target(0) == snap.value_target(0));
}

TEST_CASE("checkpoint round trip and frozen hash") {
  Rng rng(11);
  TwoLayerNet a = init_net(5, 3, rng), c = init_net(2, 7, rng);
  a.mutable_weights().array() += 0.25;
  std::stringstream ss;
  write_nets(ss, {&a, &c});
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "LPALMNET");
  // header + per net (2 dims + signs + two matrices)
  CHECK(bytes.size() == 8 + 4 + 4 + (8 + 8 * 5 + 16 * 15) + (8 + 8 * 2 + 16 * 14));
  const auto back = read_nets(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == a);
  CHECK(back[1] == c);

  const std::uint64_t h = frozen_hash(a);
  a.mutable_weights().array() += 1.0;
  CHECK(frozen_hash(a) == h);
  TwoLayerNet flipped(-a.out_sign(), a.init_weights());
  CHECK(frozen_hash(flipped) != h);

  std::stringstream bad("NOTANET!");
  CHECK_THROWS(read_nets(bad));
}
