#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lpalm/rng.hpp"

namespace lpalm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Malformed input: wrong shape, out-of-range index, invalid distribution.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Finite discounted MDP (S, A, P, r, rho0, gamma).
///
/// Transitions are stored as an (S*A) x S matrix whose row `pair(s, a)` is
/// P(. | s, a); rewards as a length S*A vector in the same pair order.
class TabularMDP {
 public:
  TabularMDP(int n_states, int n_actions, Mat transition, Vec reward, Vec rho0, double gamma);

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  int n_pairs() const { return n_states_ * n_actions_; }
  int pair(int s, int a) const { return s * n_actions_ + a; }
  double gamma() const { return gamma_; }

  const Mat& transition() const { return transition_; }
  const Vec& reward() const { return reward_; }
  const Vec& rho0() const { return rho0_; }

  double p(int s, int a, int s_next) const { return transition_(pair(s, a), s_next); }
  double r(int s, int a) const { return reward_(pair(s, a)); }

  /// r(s,a) + gamma * E[V(s')] for every pair.
  Vec q_values(const Vec& V) const;

  void check_state(int s) const;
  void check_action(int a) const;

 private:
  int n_states_;
  int n_actions_;
  Mat transition_;
  Vec reward_;
  Vec rho0_;
  double gamma_;
};

/// Stochastic policy, one probability row per state.
class Policy {
 public:
  explicit Policy(Mat probs);
  static Policy deterministic(std::span<const int> actions, int n_actions);
  static Policy uniform(int n_states, int n_actions);

  const Mat& probs() const { return probs_; }
  int n_states() const { return static_cast<int>(probs_.rows()); }
  int n_actions() const { return static_cast<int>(probs_.cols()); }
  /// Most probable action; lowest index wins ties.
  int argmax(int s) const;

 private:
  Mat probs_;
};

/// One experienced transition. `r` may be a multi-step discounted sum, in
/// which case `steps` is the lookahead length and the bootstrap discount is
/// gamma^steps.
struct TransitionTuple {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  double priority = 0.0;
  int steps = 1;
};

struct Trajectory {
  int initial_state = 0;
  std::vector<TransitionTuple> tuples;
};

struct Sample {
  int s_next;
  double reward;
};

/// (T V)(s) = max_a { r(s,a) + gamma E[V(s')] }.
Vec bellman_operator(const TabularMDP& mdp, const Vec& V);

Sample sample_transition(const TabularMDP& mdp, int s, int a, Rng& rng);

/// Draws s0 ~ rho0 and follows `policy` for `horizon` steps.
Trajectory rollout(const TabularMDP& mdp, const Policy& policy, int horizon, Rng& rng);

/// Replaces each one-step reward by the l-step discounted sum. Tuples closer
/// than l to the end keep the shortened horizon in `steps`.
std::vector<TransitionTuple> multi_step_compress(std::span<const TransitionTuple> trajectory,
                                                 int l, double gamma);

double discounted_return(std::span<const TransitionTuple> trajectory, double gamma);

/// Exact V^pi from the linear system (I - gamma P_pi) V = r_pi.
Vec evaluate_policy(const TabularMDP& mdp, const Policy& policy);

/// Expected undiscounted reward over the first `horizon` steps from rho0.
double finite_horizon_return(const TabularMDP& mdp, const Policy& policy, int horizon);

/// Text serialization: counts, gamma, then row-major reward, transition
/// (indexed s, a, s') and rho0.
void write_mdp(std::ostream& out, const TabularMDP& mdp);
TabularMDP read_mdp(std::istream& in);
void save_mdp(const std::string& path, const TabularMDP& mdp);
TabularMDP load_mdp(const std::string& path);

}  // namespace lpalm
