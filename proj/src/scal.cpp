#include "lpalm/scal.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "lpalm/lp_oracle.hpp"

namespace lpalm {

ReplayBuffer::ReplayBuffer(std::size_t capacity, double prio_eps) : capacity_(capacity), prio_eps_(prio_eps) {
  if (capacity < 1) throw InputError("replay capacity must be positive");
  if (!(prio_eps >= 0)) throw InputError("priority floor must be nonnegative");
  while (leaves_ < capacity_) leaves_ *= 2;
  data_.resize(capacity_);
  tree_.assign(2 * leaves_, 0.0);
}

void ReplayBuffer::set_leaf(std::size_t slot, double weight) {
  std::size_t i = slot + leaves_;
  tree_[i] = weight;
  for (i /= 2; i >= 1; i /= 2) tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
}

void ReplayBuffer::push(const TransitionTuple& t) {
  TransitionTuple stored = t;
  stored.priority = std::max(0.0, t.priority);
  data_[next_] = stored;
  set_leaf(next_, stored.priority + prio_eps_);
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void ReplayBuffer::push_initial(int s) {
  if (initial_.size() < capacity_) {
    initial_.push_back(s);
  } else {
    initial_[initial_next_] = s;
    initial_next_ = (initial_next_ + 1) % capacity_;
  }
}

std::vector<std::size_t> ReplayBuffer::ordered_slots() const {
  std::vector<std::size_t> out;
  out.reserve(size_);
  const std::size_t start = size_ < capacity_ ? 0 : next_;
  for (std::size_t k = 0; k < size_; ++k) out.push_back((start + k) % capacity_);
  return out;
}

void ReplayBuffer::update_priority(std::size_t slot, double priority) {
  if (slot >= size_) throw InputError("replay slot out of range");
  data_[slot].priority = std::max(0.0, priority);
  set_leaf(slot, data_[slot].priority + prio_eps_);
}

std::vector<std::size_t> ReplayBuffer::sample_proportional(std::size_t b, Rng& rng) const {
  if (size_ == 0) throw NotReadyError("replay buffer is empty");
  const double total = tree_[1];
  if (!(total > 0.0)) throw NotReadyError("replay buffer has no positive priority");
  std::vector<std::size_t> out;
  out.reserve(b);
  for (std::size_t k = 0; k < b; ++k) {
    double u = rng.uniform() * total;
    std::size_t i = 1;
    while (i < leaves_) {
      const std::size_t left = 2 * i;
      if (u < tree_[left] || tree_[left + 1] <= 0.0) {
        i = left;
      } else {
        u -= tree_[left];
        i = left + 1;
      }
    }
    std::size_t slot = i - leaves_;
    // Rounding can land on an empty leaf; step back to the last filled one.
    if (slot >= size_ || tree_[i] <= 0.0) {
      slot = std::min(slot, size_ - 1);
      while (slot > 0 && tree_[slot + leaves_] <= 0.0) --slot;
    }
    out.push_back(slot);
  }
  return out;
}

std::vector<std::size_t> ReplayBuffer::sample_uniform(std::size_t b, Rng& rng) const {
  if (size_ == 0) throw NotReadyError("replay buffer is empty");
  std::vector<std::size_t> out(b);
  for (auto& i : out) i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(size_)));
  return out;
}

std::vector<int> ReplayBuffer::sample_initial(std::size_t b, Rng& rng) const {
  if (initial_.empty()) throw NotReadyError("no initial states stored");
  std::vector<int> out(b);
  for (auto& s : out) s = initial_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(initial_.size())))];
  return out;
}

void ScalConfig::validate() const {
  if (!(mu > 0)) throw InputError("scal.mu must be positive");
  if (!(beta > 1.0 / (4.0 * mu))) throw InputError("scal.beta must exceed 1/(4 mu)");
  if (!(lr_v > 0 && lr_h > 0 && lr_x > 0)) throw InputError("learning rates must be positive");
  if (batch < 1) throw InputError("scal.batch must be positive");
  if (target_period < 1) throw InputError("scal.target_period must be positive");
  if (total_steps < 0) throw InputError("scal.steps must be nonnegative");
  if (lookahead < 1) throw InputError("scal.lookahead must be at least 1");
  if (!(epsilon_explore >= 0 && epsilon_explore <= 1)) throw InputError("scal.epsilon must lie in [0, 1]");
  if (!(explore_fraction > 0 && explore_fraction <= 1)) throw InputError("scal.explore_fraction must lie in (0, 1]");
  if (ntk_radius && !(*ntk_radius > 0)) throw InputError("scal.radius must be positive");
  if (width < 1) throw InputError("scal.width must be positive");
  if (capacity < 1) throw InputError("scal.capacity must be positive");
  if (!(prio_eps >= 0)) throw InputError("scal.prio_eps must be nonnegative");
  if (slack_scale < 0 || value_scale < 0 || mass_scale < 0) throw InputError("output scales must be nonnegative");
  if (!(sigma > 0)) throw InputError("scal.sigma must be positive");
  if (eval_every < 1) throw InputError("scal.eval_every must be positive");
  if (episode_length < 0) throw InputError("scal.episode_length must be nonnegative");
}

BundleShape bundle_shape_for(const Environment& env, const ScalConfig& cfg) {
  const TabularMDP& m = env.model;
  const double rmax = m.reward().cwiseAbs().maxCoeff();
  const double horizon = 1.0 / (1.0 - m.gamma());
  BundleShape shape;
  shape.n_states = m.n_states();
  shape.n_actions = m.n_actions();
  shape.width = cfg.width;
  shape.slack_scale = cfg.slack_scale > 0 ? cfg.slack_scale : (1.0 + rmax) * horizon;
  shape.slack_shift = std::log(std::max(1.0, shape.slack_scale));
  shape.value_scale = cfg.value_scale > 0 ? cfg.value_scale : std::max(rmax, 1e-3) * horizon;
  shape.mass_scale = cfg.mass_scale > 0 ? cfg.mass_scale : horizon;
  return shape;
}

double transition_priority(const NetBundle& nets, const TransitionTuple& t, double gamma) {
  return std::max(0.0, t.r + std::pow(gamma, t.steps) * nets.value_target(t.s_next) - nets.value(t.s));
}

std::vector<TransitionTuple> sample_proportional(ReplayBuffer& buffer, std::size_t b, Rng& rng,
                                                 const NetBundle& nets, double gamma) {
  const auto slots = buffer.sample_proportional(b, rng);
  std::vector<TransitionTuple> out;
  out.reserve(b);
  for (std::size_t slot : slots) out.push_back(buffer.at(slot));
  for (std::size_t slot : slots) buffer.update_priority(slot, transition_priority(nets, buffer.at(slot), gamma));
  return out;
}

int behavior_action(const NetBundle& nets, int s, double epsilon_explore, Rng& rng) {
  const int A = nets.shape.n_actions;
  if (rng.uniform() < epsilon_explore) return rng.uniform_int(A);
  const MultiplierOut m = nets.multiplier(s);
  return rng.categorical(std::span<const double>(m.probs.data(), static_cast<std::size_t>(A)));
}

namespace {

void check_batch(const std::vector<TransitionTuple>& batch, const std::vector<int>& initial) {
  if (batch.empty() || batch.size() != initial.size())
    throw InputError("transition and initial-state batches must be non-empty and equally sized");
}

}  // namespace

namespace {

/// Per-state memo of network outputs; all evaluations within one update
/// share the same weights.
class OutputCache {
 public:
  explicit OutputCache(const NetBundle& nets)
      : nets_(nets),
        live_(static_cast<std::size_t>(nets.shape.n_states)),
        targ_(static_cast<std::size_t>(nets.shape.n_states)),
        v_(static_cast<std::size_t>(nets.shape.n_states), kUnset),
        vt_(static_cast<std::size_t>(nets.shape.n_states), kUnset) {}

  const MultiplierOut& multiplier(int s) {
    auto& m = live_[static_cast<std::size_t>(s)];
    if (m.x.size() == 0) m = nets_.multiplier(s);
    return m;
  }
  const MultiplierOut& multiplier_target(int s) {
    auto& m = targ_[static_cast<std::size_t>(s)];
    if (m.x.size() == 0) m = nets_.multiplier_target(s);
    return m;
  }
  double value(int s) {
    double& v = v_[static_cast<std::size_t>(s)];
    if (std::isnan(v)) v = nets_.value(s);
    return v;
  }
  double value_target(int s) {
    double& v = vt_[static_cast<std::size_t>(s)];
    if (std::isnan(v)) v = nets_.value_target(s);
    return v;
  }

 private:
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  const NetBundle& nets_;
  std::vector<MultiplierOut> live_, targ_;
  std::vector<double> v_, vt_;
};

}  // namespace

CompositeTerms composite_grad_terms(const std::vector<TransitionTuple>& batch, const std::vector<int>& initial,
                                    const NetBundle& nets, const ScalConfig& cfg, double gamma) {
  check_batch(batch, initial);
  const double mu = cfg.mu, beta = cfg.beta;
  const double b = static_cast<double>(batch.size());
  OutputCache cache(nets);
  CompositeTerms out;
  NetBundle::OutputCoefs coefs = nets.zero_coefs();
  out.x.reserve(batch.size());
  out.z_targ.reserve(batch.size());
  out.e.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TransitionTuple& t = batch[i];
    const int s0 = initial[i];
    const MultiplierOut& m = cache.multiplier(t.s);
    const double x = m.x(t.a);
    const double z = z_value(cache.multiplier_target(t.s).x(t.a), nets.slack(t.s, t.a), mu, t.r, cache.value(t.s),
                             cache.value_target(t.s_next), std::pow(gamma, t.steps));
    const double e = beta * (z - x);
    out.x.push_back(x);
    out.z_targ.push_back(z);
    out.e.push_back(e);
    out.objective += cache.value(s0) + x * z / mu + 0.5 * beta * (x - z) * (x - z);
    out.penalty += e * e;
    out.mass += x;

    nets.add_value_grad(s0, 1.0 / b, coefs);
    nets.add_value_grad(t.s, -(x + mu * e) / b, coefs);
    nets.add_slack_grad(t.s, t.a, (x + mu * e) / b, coefs);
    nets.add_multiplier_grad(t.s, t.a, (z - mu * e) / (mu * b), coefs, m);
  }
  out.grads = nets.weight_grads(coefs);
  out.objective /= b;
  out.penalty /= b;
  out.mass /= b;
  return out;
}

double composite_objective_value(const std::vector<TransitionTuple>& batch, const std::vector<int>& initial,
                                 const NetBundle& nets, const ScalConfig& cfg, double gamma) {
  check_batch(batch, initial);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TransitionTuple& t = batch[i];
    const double x = nets.x(t.s, t.a);
    const double z = z_value(nets.x_target_value(t.s, t.a), nets.slack(t.s, t.a), cfg.mu, t.r, nets.value(t.s),
                             nets.value_target(t.s_next), std::pow(gamma, t.steps));
    total += nets.value(initial[i]) + x * z / cfg.mu + 0.5 * cfg.beta * (x - z) * (x - z);
  }
  return total / static_cast<double>(batch.size());
}

Optimizers make_optimizers(const NetBundle& nets, const ScalConfig& cfg) {
  const long horizon = std::max<long>(1, cfg.total_steps);
  return {OptState::like(nets.v_net.weights(), cfg.lr_v, horizon),
          OptState::like(nets.h_net.weights(), cfg.lr_h, horizon),
          OptState::like(nets.x_net.weights(), cfg.lr_x, horizon),
          OptState::like(nets.x_state_head.weights(), cfg.lr_x, horizon)};
}

void apply_update(NetBundle& nets, Optimizers& opt, HeadGrads grads, const ScalConfig& cfg, long step_index) {
  clip_local(grads);
  for (int k = 0; k < kNumHeads; ++k) adam_step(opt[k], nets.head(static_cast<Head>(k)).mutable_weights(), grads[k]);
  if (cfg.ntk_radius)
    for (int k = 0; k < kNumHeads; ++k) nets.head(static_cast<Head>(k)).project_ball(*cfg.ntk_radius);
  if (step_index % cfg.target_period == 0) nets.sync_target();
}

namespace {

std::vector<TransitionTuple> draw_batch(ReplayBuffer& buffer, const NetBundle& nets, const ScalConfig& cfg,
                                        Rng& rng, double gamma) {
  const auto b = static_cast<std::size_t>(cfg.batch);
  if (buffer.size() < b) throw NotReadyError("replay buffer holds fewer transitions than one batch");
  if (cfg.proportional) return sample_proportional(buffer, b, rng, nets, gamma);
  std::vector<TransitionTuple> out;
  for (std::size_t slot : buffer.sample_uniform(b, rng)) out.push_back(buffer.at(slot));
  return out;
}

}  // namespace

StepStats scal_step(ReplayBuffer& buffer, NetBundle& nets, Optimizers& opt, const ScalConfig& cfg, long step_index,
                    Rng& rng, double gamma) {
  const std::vector<TransitionTuple> batch = draw_batch(buffer, nets, cfg, rng, gamma);
  const std::vector<int> initial = buffer.sample_initial(static_cast<std::size_t>(cfg.batch), rng);
  CompositeTerms terms = composite_grad_terms(batch, initial, nets, cfg, gamma);
  apply_update(nets, opt, std::move(terms.grads), cfg, step_index);
  return {terms.objective, terms.penalty, terms.mass};
}

Policy multiplier_policy(const NetBundle& nets) {
  std::vector<int> actions;
  for (int s = 0; s < nets.shape.n_states; ++s) {
    const Vec p = nets.multiplier(s).logits;
    int best = 0;
    for (int a = 1; a < p.size(); ++a)
      if (p(a) > p(best)) best = a;
    actions.push_back(best);
  }
  return Policy::deterministic(actions, nets.shape.n_actions);
}

namespace {

/// Environment interaction shared by both training loops: behavior policy,
/// multi-step compression of the recent window, episode resets and logging.
class Interaction {
 public:
  Interaction(const Environment& env, const ScalConfig& cfg, ReplayBuffer& buffer, Rng rng)
      : env_(env), cfg_(cfg), buffer_(buffer), rng_(rng) {
    episode_length_ = cfg.episode_length > 0 ? cfg.episode_length : env.episode_length;
    s_ = env_.reset(rng_);
    buffer_.push_initial(s_);
  }

  void act(long k, const NetBundle& nets) {
    const double ramp = cfg_.explore_fraction * static_cast<double>(std::max<long>(1, cfg_.total_steps));
    const double frac = std::min(1.0, static_cast<double>(k) / ramp);
    const double eps = 1.0 + (cfg_.epsilon_explore - 1.0) * frac;
    const int a = behavior_action(nets, s_, eps, rng_);
    const Sample smp = env_.step(s_, a, rng_);
    window_.push_back({s_, a, smp.reward, smp.s_next, 0.0, 1});
    if (static_cast<int>(window_.size()) == cfg_.lookahead) emit_front(nets);
    s_ = smp.s_next;
    if (++t_ == episode_length_) {
      while (!window_.empty()) emit_front(nets);
      s_ = env_.reset(rng_);
      buffer_.push_initial(s_);
      t_ = 0;
    }
  }

 private:
  void emit_front(const NetBundle& nets) {
    TransitionTuple t = window_.front();
    double disc = 1.0;
    t.r = 0.0;
    for (const auto& w : window_) {
      t.r += disc * w.r;
      disc *= env_.model.gamma();
    }
    t.s_next = window_.back().s_next;
    t.steps = static_cast<int>(window_.size());
    t.priority = transition_priority(nets, t, env_.model.gamma());
    buffer_.push(t);
    window_.pop_front();
  }

  const Environment& env_;
  const ScalConfig& cfg_;
  ReplayBuffer& buffer_;
  Rng rng_;
  int episode_length_;
  int s_ = 0;
  int t_ = 0;
  std::deque<TransitionTuple> window_;
};

class WindowLog {
 public:
  void add(const StepStats& st) {
    obj_ += st.objective;
    pen_ += st.penalty;
    mass_ += st.mass;
    ++n_;
  }
  LogRow flush(long step, const Environment& env, const NetBundle& nets, const Optimizers& opt) {
    LogRow row;
    row.step = step;
    row.window_return = env.evaluate(multiplier_policy(nets));
    if (n_ > 0) {
      row.objective = obj_ / n_;
      row.penalty_residual = pen_ / n_;
      row.mass_estimate = mass_ / n_;
    }
    row.lr = opt[kValue].current_lr();
    obj_ = pen_ = mass_ = 0.0;
    n_ = 0;
    return row;
  }

 private:
  double obj_ = 0.0, pen_ = 0.0, mass_ = 0.0;
  long n_ = 0;
};

struct Streams {
  Rng env, nets, sample;
  explicit Streams(std::uint64_t seed) {
    Rng root(seed);
    env = root.split();
    nets = root.split();
    sample = root.split();
  }
};

bool ready(const ReplayBuffer& buffer, const ScalConfig& cfg) {
  return buffer.size() >= static_cast<std::size_t>(cfg.batch) && buffer.initial_size() >= 1;
}

}  // namespace

TrainResult scal_train(const Environment& env, const ScalConfig& cfg, const TrainHook& hook) {
  cfg.validate();
  Streams rngs(cfg.seed);
  TrainResult res{{}, NetBundle::create(bundle_shape_for(env, cfg), rngs.nets), ReplayBuffer(cfg.capacity, cfg.prio_eps)};
  Optimizers opt = make_optimizers(res.nets, cfg);
  Interaction inter(env, cfg, res.buffer, rngs.env);
  WindowLog window;
  const double gamma = env.model.gamma();
  long updates = 0;
  for (long k = 0; k < cfg.total_steps; ++k) {
    inter.act(k, res.nets);
    if (ready(res.buffer, cfg)) {
      window.add(scal_step(res.buffer, res.nets, opt, cfg, updates, rngs.sample, gamma));
      ++updates;
      if (hook) hook(k, res.nets, res.buffer);
    }
    if ((k + 1) % cfg.eval_every == 0 || k + 1 == cfg.total_steps)
      res.log.push_back(window.flush(k + 1, env, res.nets, opt));
  }
  return res;
}

TrainResult deep_alm_train(const Environment& env, const ScalConfig& cfg, int inner_steps, const TrainHook& hook) {
  cfg.validate();
  if (inner_steps < 1) throw InputError("deep ALM needs at least one inner step");
  Streams rngs(cfg.seed);
  TrainResult res{{}, NetBundle::create(bundle_shape_for(env, cfg), rngs.nets), ReplayBuffer(cfg.capacity, cfg.prio_eps)};
  NetBundle& nets = res.nets;
  Optimizers opt = make_optimizers(nets, cfg);
  Interaction inter(env, cfg, res.buffer, rngs.env);
  WindowLog window;
  const double gamma = env.model.gamma();
  const double mu = cfg.mu;
  int inner = 0;
  for (long k = 0; k < cfg.total_steps; ++k) {
    inter.act(k, nets);
    if (ready(res.buffer, cfg)) {
      if (inner == 0) nets.sync_target();
      const std::vector<TransitionTuple> batch = draw_batch(res.buffer, nets, cfg, rngs.sample, gamma);
      const std::vector<int> initial = res.buffer.sample_initial(static_cast<std::size_t>(cfg.batch), rngs.sample);
      const double b = static_cast<double>(batch.size());

      // z with the frozen multiplier and the live value and slack networks.
      std::vector<double> z(batch.size());
      StepStats st;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const TransitionTuple& t = batch[i];
        z[i] = z_value(nets.x_target_value(t.s, t.a), nets.slack(t.s, t.a), mu, t.r, nets.value(t.s),
                       nets.value(t.s_next), std::pow(gamma, t.steps));
      }

      NetBundle::OutputCoefs c = nets.zero_coefs();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const TransitionTuple& t = batch[i];
        const MultiplierOut m = nets.multiplier(t.s);
        nets.add_multiplier_grad(t.s, t.a, (m.x(t.a) - z[i]) / b, c, m);
      }
      HeadGrads g = nets.weight_grads(c);
      clip_local(g);
      adam_step(opt[kLogits], nets.x_net.mutable_weights(), g[kLogits]);
      adam_step(opt[kMass], nets.x_state_head.mutable_weights(), g[kMass]);

      c = nets.zero_coefs();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const TransitionTuple& t = batch[i];
        const double x = nets.x(t.s, t.a);
        nets.add_value_grad(initial[i], 1.0 / b, c);
        nets.add_value_grad(t.s_next, x * std::pow(gamma, t.steps) / b, c);
        nets.add_value_grad(t.s, -x / b, c);
        nets.add_slack_grad(t.s, t.a, x / b, c);
        st.objective += nets.value(initial[i]) + x * z[i] / mu;
        st.penalty += (x - z[i]) * (x - z[i]);
        st.mass += x;
      }
      g = nets.weight_grads(c);
      clip_local(g);
      adam_step(opt[kValue], nets.v_net.mutable_weights(), g[kValue]);
      adam_step(opt[kSlack], nets.h_net.mutable_weights(), g[kSlack]);
      if (cfg.ntk_radius)
        for (int h = 0; h < kNumHeads; ++h) nets.head(static_cast<Head>(h)).project_ball(*cfg.ntk_radius);

      st.objective /= b;
      st.penalty /= b;
      st.mass /= b;
      window.add(st);
      inner = (inner + 1) % inner_steps;
      if (hook) hook(k, nets, res.buffer);
    }
    if ((k + 1) % cfg.eval_every == 0 || k + 1 == cfg.total_steps)
      res.log.push_back(window.flush(k + 1, env, nets, opt));
  }
  return res;
}

}  // namespace lpalm
