#include "lpalm/nets.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>

namespace lpalm {

TwoLayerNet::TwoLayerNet(Vec out_sign, Mat weights)
    : out_sign_(std::move(out_sign)), weights_(std::move(weights)) {
  if (weights_.rows() < 1 || weights_.cols() < 1) throw InputError("network needs positive width and input size");
  if (out_sign_.size() != weights_.rows()) throw InputError("one output sign per hidden unit is required");
  for (Eigen::Index i = 0; i < out_sign_.size(); ++i)
    if (out_sign_(i) != 1.0 && out_sign_(i) != -1.0) throw InputError("output signs must be +1 or -1");
  init_weights_ = weights_;
  scale_ = 1.0 / std::sqrt(static_cast<double>(weights_.rows()));
}

double TwoLayerNet::forward(const Vec& in) const {
  if (in.size() != weights_.cols()) throw InputError("network input has the wrong dimension");
  const Vec pre = weights_ * in;
  return scale_ * out_sign_.dot(pre.cwiseMax(0.0));
}

Mat TwoLayerNet::grad(const Vec& in) const {
  if (in.size() != weights_.cols()) throw InputError("network input has the wrong dimension");
  const Vec pre = weights_ * in;
  Vec coef(pre.size());
  for (Eigen::Index i = 0; i < pre.size(); ++i) coef(i) = pre(i) >= 0.0 ? scale_ * out_sign_(i) : 0.0;
  return coef * in.transpose();
}

double TwoLayerNet::forward_onehot(int j, double value) const {
  return scale_ * out_sign_.dot((weights_.col(j) * value).cwiseMax(0.0));
}

void TwoLayerNet::accumulate_onehot(int j, double value, double coef, Mat& g) const {
  const double c = coef * scale_ * value;
  g.col(j).array() += ((weights_.col(j).array() * value) >= 0.0).select(c * out_sign_.array(), 0.0);
}

double TwoLayerNet::forward_tagged(int j) const {
  const Eigen::Index last = weights_.cols() - 1;
  return scale_ * out_sign_.dot(((weights_.col(j) + weights_.col(last)) * M_SQRT1_2).cwiseMax(0.0));
}

void TwoLayerNet::accumulate_tagged(int j, double coef, Mat& g) const {
  const Eigen::Index last = weights_.cols() - 1;
  const double c = coef * scale_ * M_SQRT1_2;
  const Vec d = ((weights_.col(j) + weights_.col(last)).array() >= 0.0).select(c * out_sign_.array(), 0.0);
  g.col(j) += d;
  g.col(last) += d;
}

double TwoLayerNet::forward_code(int j, int n_codes) const {
  return in_dim() > n_codes ? forward_tagged(j) : forward_onehot(j);
}

void TwoLayerNet::accumulate_code(int j, int n_codes, double coef, Mat& g) const {
  if (in_dim() > n_codes)
    accumulate_tagged(j, coef, g);
  else
    accumulate_onehot(j, 1.0, coef, g);
}

void TwoLayerNet::project_ball(double radius) {
  if (!(radius > 0)) throw InputError("projection radius must be positive");
  const double d = distance_from_init();
  if (d > radius) weights_ = init_weights_ + (radius / d) * (weights_ - init_weights_);
}

TwoLayerNet init_net(int width, int in_dim, Rng& rng, bool positive_signs) {
  if (width < 1 || in_dim < 1) throw InputError("network needs positive width and input size");
  Vec sign(width);
  for (int i = 0; i < width; ++i) sign(i) = positive_signs ? 1.0 : (rng.uniform() < 0.5 ? -1.0 : 1.0);
  Mat W(width, in_dim);
  const double sd = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int i = 0; i < width; ++i)
    for (int j = 0; j < in_dim; ++j) W(i, j) = sd * rng.normal();
  return TwoLayerNet(std::move(sign), std::move(W));
}

namespace {

constexpr char kMagic[8] = {'L', 'P', 'A', 'L', 'M', 'N', 'E', 'T'};

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw InputError("truncated network checkpoint");
  return v;
}

void put_row_major(std::ostream& out, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(out, m(i, j));
}

Mat get_row_major(std::istream& in, std::uint32_t rows, std::uint32_t cols) {
  Mat m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = get<double>(in);
  return m;
}

}  // namespace

void write_nets(std::ostream& out, const std::vector<const TwoLayerNet*>& nets) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(nets.size()));
  for (const TwoLayerNet* n : nets) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(n->width()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(n->in_dim()));
    for (int i = 0; i < n->width(); ++i) put<double>(out, n->out_sign_(i));
    put_row_major(out, n->weights_);
    put_row_major(out, n->init_weights_);
  }
}

std::vector<TwoLayerNet> read_nets(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InputError("not a network checkpoint");
  if (get<std::uint32_t>(in) != 1) throw InputError("unsupported checkpoint version");
  const auto count = get<std::uint32_t>(in);
  std::vector<TwoLayerNet> nets;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto width = get<std::uint32_t>(in);
    const auto in_dim = get<std::uint32_t>(in);
    Vec sign(width);
    for (std::uint32_t i = 0; i < width; ++i) sign(i) = get<double>(in);
    Mat W = get_row_major(in, width, in_dim);
    Mat W0 = get_row_major(in, width, in_dim);
    TwoLayerNet net(std::move(sign), std::move(W0));
    net.weights_ = std::move(W);
    nets.push_back(std::move(net));
  }
  return nets;
}

std::uint64_t frozen_hash(const TwoLayerNet& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const double* p, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(net.out_sign().data(), net.out_sign().size());
  mix(net.init_weights().data(), net.init_weights().size());
  return h;
}

NetBundle NetBundle::create(const BundleShape& shape, Rng& rng) {
  if (shape.n_states < 1 || shape.n_actions < 1 || shape.width < 1) throw InputError("bad network bundle shape");
  if (!(shape.slack_scale >= 0)) throw InputError("slack scale must be nonnegative");
  const int S = shape.n_states, SA = shape.n_states * shape.n_actions;
  NetBundle b;
  b.shape = shape;
  b.v_net = init_net(shape.width, S, rng);
  b.h_net = init_net(shape.width, SA, rng);
  b.x_net = init_net(shape.width, SA, rng);
  b.x_state_head = init_net(shape.width, S + 1, rng);
  b.mean_head = init_net(shape.width, S, rng);
  b.sync_target();
  return b;
}

TwoLayerNet& NetBundle::head(Head h) {
  switch (h) {
    case kValue: return v_net;
    case kSlack: return h_net;
    case kLogits: return x_net;
    case kMass: return x_state_head;
  }
  throw InputError("unknown head");
}

const TwoLayerNet& NetBundle::head(Head h) const { return const_cast<NetBundle*>(this)->head(h); }

double NetBundle::value(int s) const { return shape.value_scale * v_net.forward_code(s, shape.n_states); }
double NetBundle::value_target(int s) const { return shape.value_scale * v_target.forward_code(s, shape.n_states); }

double NetBundle::slack(int s, int a) const {
  return shape.slack_scale * sigmoid(h_net.forward_code(pair(s, a), shape.n_states * shape.n_actions) - shape.slack_shift);
}

Vec NetBundle::slack_all(int s) const {
  Vec out(shape.n_actions);
  for (int a = 0; a < shape.n_actions; ++a) out(a) = slack(s, a);
  return out;
}

namespace {

MultiplierOut multiplier_from(const TwoLayerNet& logits_net, const TwoLayerNet& mass_net, const BundleShape& shape,
                              int s) {
  const int A = shape.n_actions;
  MultiplierOut out;
  out.logits.resize(A);
  for (int a = 0; a < A; ++a) out.logits(a) = logits_net.forward_code(s * A + a, shape.n_states * A);
  const double top = out.logits.maxCoeff();
  out.probs = (out.logits.array() - top).exp();
  out.probs /= out.probs.sum();
  out.mass_pre = mass_net.forward_code(s, shape.n_states);
  out.mass = shape.mass_scale * softplus(out.mass_pre);
  out.x = out.mass * out.probs;
  return out;
}

}  // namespace

MultiplierOut NetBundle::multiplier(int s) const { return multiplier_from(x_net, x_state_head, shape, s); }
MultiplierOut NetBundle::multiplier_target(int s) const {
  return multiplier_from(x_target, x_state_target, shape, s);
}

NetBundle::OutputCoefs NetBundle::zero_coefs() const {
  const int S = shape.n_states, SA = shape.n_states * shape.n_actions;
  return {Vec::Zero(S), Vec::Zero(SA), Vec::Zero(SA), Vec::Zero(S)};
}

void NetBundle::add_value_grad(int s, double coef, OutputCoefs& c) const { c.value(s) += coef * shape.value_scale; }

void NetBundle::add_slack_grad(int s, int a, double coef, OutputCoefs& c) const {
  const double sg = sigmoid(h_net.forward_code(pair(s, a), shape.n_states * shape.n_actions) - shape.slack_shift);
  c.slack(pair(s, a)) += coef * shape.slack_scale * sg * (1.0 - sg);
}

void NetBundle::add_multiplier_grad(int s, int a, double coef, OutputCoefs& c) const {
  add_multiplier_grad(s, a, coef, c, multiplier(s));
}

void NetBundle::add_multiplier_grad(int s, int a, double coef, OutputCoefs& c, const MultiplierOut& m) const {
  c.mass(s) += coef * shape.mass_scale * sigmoid(m.mass_pre) * m.probs(a);
  // d x(s,a) / d l(s,b) = mass * p_a (1{a=b} - p_b).
  for (int b = 0; b < shape.n_actions; ++b)
    c.logits(pair(s, b)) += coef * m.mass * m.probs(a) * ((a == b ? 1.0 : 0.0) - m.probs(b));
}

HeadGrads NetBundle::weight_grads(const OutputCoefs& c) const {
  HeadGrads g = zero_grads();
  const std::array<const Vec*, kNumHeads> coefs{&c.value, &c.slack, &c.logits, &c.mass};
  for (int k = 0; k < kNumHeads; ++k) {
    const TwoLayerNet& net = head(static_cast<Head>(k));
    const Vec& v = *coefs[static_cast<std::size_t>(k)];
    for (Eigen::Index j = 0; j < v.size(); ++j)
      if (v(j) != 0.0) net.accumulate_code(static_cast<int>(j), static_cast<int>(v.size()), v(j), g[k]);
  }
  return g;
}

double NetBundle::multiplier_density(int s, double u, double sigma, double a_bar) const {
  if (!(sigma > 0)) throw InputError("density sigma must be positive");
  if (!(a_bar > 0)) throw InputError("action bound must be positive");
  const double mass = shape.mass_scale * softplus(x_state_head.forward_code(s, shape.n_states));
  const double mean = mean_head.forward_code(s, shape.n_states);
  const double z = (u - mean) / sigma;
  const double log_gauss = -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
  const double t = std::tanh(u);
  const double jac = std::max(1.0 - t * t, 1e-6);
  return mass * std::exp(log_gauss - std::log(jac) - std::log(a_bar));
}

void NetBundle::sync_target() {
  v_target = v_net;
  x_target = x_net;
  x_state_target = x_state_head;
}

HeadGrads NetBundle::zero_grads() const {
  HeadGrads g;
  for (int k = 0; k < kNumHeads; ++k) {
    const TwoLayerNet& n = head(static_cast<Head>(k));
    g[k] = Mat::Zero(n.width(), n.in_dim());
  }
  return g;
}

void clip_local(HeadGrads& g) {
  for (Mat& m : g) {
    const double n = m.norm();
    if (n > 1.0) m /= n;
  }
}

OptState OptState::like(const Mat& w, double base_lr, long anneal_horizon) {
  if (!(base_lr > 0)) throw InputError("learning rate must be positive");
  if (anneal_horizon < 1) throw InputError("anneal horizon must be positive");
  OptState o;
  o.first_moment = Mat::Zero(w.rows(), w.cols());
  o.second_moment = Mat::Zero(w.rows(), w.cols());
  o.base_lr = base_lr;
  o.anneal_horizon = anneal_horizon;
  return o;
}

double OptState::current_lr() const {
  return base_lr * std::max(0.0, 1.0 - static_cast<double>(step_count) / static_cast<double>(anneal_horizon));
}

void adam_step(OptState& opt, Mat& weights, const Mat& grads) {
  if (grads.rows() != weights.rows() || grads.cols() != weights.cols() ||
      opt.first_moment.rows() != weights.rows() || opt.first_moment.cols() != weights.cols())
    throw InputError("optimizer, weight and gradient shapes differ");
  const double lr = opt.current_lr();
  ++opt.step_count;
  opt.first_moment = opt.beta1 * opt.first_moment + (1.0 - opt.beta1) * grads;
  opt.second_moment = opt.beta2 * opt.second_moment + (1.0 - opt.beta2) * grads.cwiseProduct(grads);
  if (lr == 0.0) return;
  const double t = static_cast<double>(opt.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, t), c2 = 1.0 - std::pow(opt.beta2, t);
  weights.array() -= lr * (opt.first_moment.array() / c1) /
                     ((opt.second_moment.array() / c2).sqrt() + opt.eps);
}

}  // namespace lpalm
