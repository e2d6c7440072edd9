#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lpalm/mdp.hpp"

namespace lpalm {

/// Width-m single-hidden-layer ReLU network with fixed +-1 output weights:
///   f(in) = (1/sqrt(m)) sum_i sign_i max(0, W_i . in).
/// Only W is trained; `init_weights` keeps the initial W for ball projection.
class TwoLayerNet {
 public:
  TwoLayerNet() = default;
  TwoLayerNet(Vec out_sign, Mat weights);

  int width() const { return static_cast<int>(weights_.rows()); }
  int in_dim() const { return static_cast<int>(weights_.cols()); }
  double scale() const { return scale_; }
  const Vec& out_sign() const { return out_sign_; }
  const Mat& weights() const { return weights_; }
  const Mat& init_weights() const { return init_weights_; }
  Mat& mutable_weights() { return weights_; }

  double forward(const Vec& in) const;
  /// Gradient of forward(in) with respect to the weights.
  Mat grad(const Vec& in) const;

  /// Fast paths for a scaled one-hot input value * e_j.
  double forward_onehot(int j, double value = 1.0) const;
  void accumulate_onehot(int j, double value, double coef, Mat& g) const;
  /// Input (e_j + e_last) / sqrt(2): a one-hot code plus a shared constant
  /// coordinate, unit norm.
  double forward_tagged(int j) const;
  void accumulate_tagged(int j, double coef, Mat& g) const;
  /// Code j out of n_codes: tagged when the net has a spare input column,
  /// plain one-hot otherwise.
  double forward_code(int j, int n_codes) const;
  void accumulate_code(int j, int n_codes, double coef, Mat& g) const;

  /// Distance ||W - W0||_F to the initialization.
  double distance_from_init() const { return (weights_ - init_weights_).norm(); }
  /// Radial projection onto {||W - W0|| <= radius}.
  void project_ball(double radius);

  bool operator==(const TwoLayerNet& o) const {
    return out_sign_ == o.out_sign_ && weights_ == o.weights_ && init_weights_ == o.init_weights_;
  }

  friend void write_nets(std::ostream&, const std::vector<const TwoLayerNet*>&);
  friend std::vector<TwoLayerNet> read_nets(std::istream&);

 private:
  Vec out_sign_;
  Mat weights_;
  Mat init_weights_;
  double scale_ = 1.0;
};

/// Signs uniform on {-1, +1} (all +1 when `positive_signs`), weights
/// N(0, 1/in_dim).
TwoLayerNet init_net(int width, int in_dim, Rng& rng, bool positive_signs = false);

/// Checkpoint layout, little-endian: "LPALMNET", u32 version (1), u32 count,
/// then per net u32 width, u32 in_dim, f64 out_sign[width], f64 weights and
/// f64 init_weights, each width x in_dim row-major.
void write_nets(std::ostream& out, const std::vector<const TwoLayerNet*>& nets);
std::vector<TwoLayerNet> read_nets(std::istream& in);

/// FNV-1a over the signs and initial weights; changes if either is mutated.
std::uint64_t frozen_hash(const TwoLayerNet& net);

inline double softplus(double y) { return y > 30.0 ? y : std::log1p(std::exp(y)); }
inline double sigmoid(double y) { return 1.0 / (1.0 + std::exp(-y)); }

/// The four trained heads in a fixed order used by gradient and optimizer
/// collections.
enum Head : int { kValue = 0, kSlack = 1, kLogits = 2, kMass = 3 };
inline constexpr int kNumHeads = 4;
using HeadGrads = std::array<Mat, kNumHeads>;

struct BundleShape {
  int n_states = 1;
  int n_actions = 1;
  int width = 64;
  /// Upper bound C of the slack head.
  double slack_scale = 1.0;
  /// Offset subtracted from the slack pre-activation; log(C) starts the
  /// slack near 1 instead of C/2.
  double slack_shift = 0.0;
  /// Output multipliers for the value and multiplier-mass heads.
  double value_scale = 1.0;
  double mass_scale = 1.0;
};

struct MultiplierOut {
  double mass_pre;  ///< mass-head network output before softplus
  double mass;      ///< x_1(s) > 0
  Vec probs;        ///< x_2(s), softmax over actions
  Vec x;            ///< mass * probs
  Vec logits;
};

/// Value, slack and two-head multiplier networks with target snapshots.
///
/// Inputs are one-hot: states use e_s in R^S and state-action pairs use
/// e_{s*A+a} in R^{SA}. The mass head takes the tagged code of
/// TwoLayerNet::forward_tagged in R^{S+1}, which keeps it from losing all
/// active units on a state.
struct NetBundle {
  BundleShape shape;
  TwoLayerNet v_net;       ///< V(s) = value_scale * f(e_s)
  TwoLayerNet h_net;       ///< h(s,a) = C * sigmoid(f(e_sa) - slack_shift)
  TwoLayerNet x_net;       ///< logits l(s,a) = f(e_sa)
  TwoLayerNet x_state_head;  ///< x_1(s) = mass_scale * softplus(f(tagged e_s))
  TwoLayerNet v_target;
  TwoLayerNet x_target;
  TwoLayerNet x_state_target;
  /// Optional continuous-action mean head on e_s.
  TwoLayerNet mean_head;

  static NetBundle create(const BundleShape& shape, Rng& rng);

  int pair(int s, int a) const { return s * shape.n_actions + a; }
  TwoLayerNet& head(Head h);
  const TwoLayerNet& head(Head h) const;

  double value(int s) const;
  double value_target(int s) const;
  double slack(int s, int a) const;
  Vec slack_all(int s) const;
  MultiplierOut multiplier(int s) const;
  MultiplierOut multiplier_target(int s) const;
  double x(int s, int a) const { return multiplier(s).x(a); }
  double x_target_value(int s, int a) const { return multiplier_target(s).x(a); }

  /// Gradients are assembled in two passes: coefficients on each raw network
  /// output are summed first, then expanded into weight space once per
  /// distinct input.
  struct OutputCoefs {
    Vec value;   ///< per state
    Vec slack;   ///< per pair
    Vec logits;  ///< per pair
    Vec mass;    ///< per state
  };
  OutputCoefs zero_coefs() const;
  /// Adds coef * dV(s).
  void add_value_grad(int s, double coef, OutputCoefs& c) const;
  void add_slack_grad(int s, int a, double coef, OutputCoefs& c) const;
  /// Adds coef * dx(s,a) into both multiplier heads; `m` is multiplier(s) at
  /// the current weights.
  void add_multiplier_grad(int s, int a, double coef, OutputCoefs& c, const MultiplierOut& m) const;
  void add_multiplier_grad(int s, int a, double coef, OutputCoefs& c) const;
  HeadGrads weight_grads(const OutputCoefs& c) const;

  /// Density of a = a_bar tanh(u) under u ~ N(mean(s), sigma^2), scaled by
  /// x_1(s). Integrates to x_1(s) over (-a_bar, a_bar).
  double multiplier_density(int s, double u, double sigma, double a_bar) const;

  void sync_target();
  HeadGrads zero_grads() const;
};

/// Per-head rescale by min(1, 1/||g||).
void clip_local(HeadGrads& g);

/// Adam with linear learning-rate annealing to zero over `anneal_horizon`.
struct OptState {
  Mat first_moment;
  Mat second_moment;
  long step_count = 0;
  double base_lr = 3e-4;
  long anneal_horizon = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptState like(const Mat& w, double base_lr, long anneal_horizon);
  double current_lr() const;
};

void adam_step(OptState& opt, Mat& weights, const Mat& grads);

}  // namespace lpalm
