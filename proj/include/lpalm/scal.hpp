#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lpalm/envs.hpp"
#include "lpalm/nets.hpp"

namespace lpalm {

/// Sampling requested before the buffer holds enough data.
class NotReadyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bounded FIFO store of transitions (with a sum tree over priorities) and
/// of episode-start states.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity, double prio_eps = 1e-3);

  void push(const TransitionTuple& t);
  void push_initial(int s);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t initial_size() const { return initial_.size(); }
  double prio_eps() const { return prio_eps_; }
  const TransitionTuple& at(std::size_t i) const { return data_[i]; }
  /// Slot indices ordered from oldest to newest.
  std::vector<std::size_t> ordered_slots() const;

  /// Slots drawn with probability proportional to priority + prio_eps.
  std::vector<std::size_t> sample_proportional(std::size_t b, Rng& rng) const;
  std::vector<std::size_t> sample_uniform(std::size_t b, Rng& rng) const;
  /// Start states drawn uniformly with replacement.
  std::vector<int> sample_initial(std::size_t b, Rng& rng) const;

  void update_priority(std::size_t slot, double priority);
  double total_weight() const { return tree_.empty() ? 0.0 : tree_[1]; }

 private:
  void set_leaf(std::size_t slot, double weight);

  std::size_t capacity_;
  double prio_eps_;
  std::vector<TransitionTuple> data_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  std::size_t leaves_ = 1;
  std::vector<double> tree_;
  std::vector<int> initial_;
  std::size_t initial_next_ = 0;
};

struct ScalConfig {
  double mu = 1.0;
  double beta = 10.0;
  double lr_v = 3e-3;
  double lr_h = 3e-3;
  double lr_x = 3e-3;
  int batch = 64;
  int target_period = 100;
  long total_steps = 20000;
  int lookahead = 1;
  /// Final exploration rate; exploration starts at 1 and decays linearly over
  /// `explore_fraction` of training.
  double epsilon_explore = 0.05;
  double explore_fraction = 1.0 / 3.0;
  std::optional<double> ntk_radius;
  std::uint64_t seed = 0;
  int width = 64;
  std::size_t capacity = 100000;
  double prio_eps = 1e-3;
  bool proportional = true;
  /// Output scales; 0 selects the automatic choice derived from the rewards.
  double slack_scale = 0.0;
  double value_scale = 0.0;
  double mass_scale = 0.0;
  double sigma = 0.3;
  long eval_every = 1000;
  /// Steps per episode; 0 keeps the environment's default.
  int episode_length = 0;

  void validate() const;
};

/// Head output scales for an environment under `cfg` (automatic values
/// filled in).
BundleShape bundle_shape_for(const Environment& env, const ScalConfig& cfg);

/// [r + gamma^steps V_target(s') - V(s)]_+.
double transition_priority(const NetBundle& nets, const TransitionTuple& t, double gamma);

/// Draws b tuples proportionally and refreshes their stored priorities with
/// the current networks.
std::vector<TransitionTuple> sample_proportional(ReplayBuffer& buffer, std::size_t b, Rng& rng,
                                                 const NetBundle& nets, double gamma);

int behavior_action(const NetBundle& nets, int s, double epsilon_explore, Rng& rng);

struct CompositeTerms {
  std::vector<double> x;       ///< x_theta(s_i, a_i)
  std::vector<double> z_targ;  ///< z^targ_i
  std::vector<double> e;       ///< beta (z^targ_i - x_i)
  double objective = 0.0;
  double penalty = 0.0;  ///< mean e^2
  double mass = 0.0;     ///< mean x_i
  /// Batch means of g (value head), q (slack head) and m (both multiplier
  /// heads).
  HeadGrads grads;
};

CompositeTerms composite_grad_terms(const std::vector<TransitionTuple>& batch, const std::vector<int>& initial,
                                    const NetBundle& nets, const ScalConfig& cfg, double gamma);

double composite_objective_value(const std::vector<TransitionTuple>& batch, const std::vector<int>& initial,
                                 const NetBundle& nets, const ScalConfig& cfg, double gamma);

using Optimizers = std::array<OptState, kNumHeads>;
Optimizers make_optimizers(const NetBundle& nets, const ScalConfig& cfg);

struct StepStats {
  double objective = 0.0;
  double penalty = 0.0;
  double mass = 0.0;
};

/// Clip per head, then Adam on all heads simultaneously; sync targets when
/// `step_index` is a multiple of the target period; project when a radius is
/// configured.
void apply_update(NetBundle& nets, Optimizers& opt, HeadGrads grads, const ScalConfig& cfg, long step_index);

/// One SCAL update from a minibatch of the buffer.
StepStats scal_step(ReplayBuffer& buffer, NetBundle& nets, Optimizers& opt, const ScalConfig& cfg, long step_index,
                    Rng& rng, double gamma);

struct LogRow {
  long step = 0;
  double window_return = 0.0;
  double objective = 0.0;
  double penalty_residual = 0.0;
  double mass_estimate = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<LogRow> log;
  NetBundle nets;
  ReplayBuffer buffer{1};
};

/// Deterministic greedy policy of the multiplier head (argmax of x_2(s)).
Policy multiplier_policy(const NetBundle& nets);

/// Observer called after each update with the step index and current state.
using TrainHook = std::function<void(long, const NetBundle&, const ReplayBuffer&)>;

TrainResult scal_train(const Environment& env, const ScalConfig& cfg, const TrainHook& hook = {});

/// Deep parameterized ALM: the multiplier target is frozen over each block of
/// `inner_steps` updates, which run theta, then phi, then psi.
TrainResult deep_alm_train(const Environment& env, const ScalConfig& cfg, int inner_steps,
                           const TrainHook& hook = {});

}  // namespace lpalm
