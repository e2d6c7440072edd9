#include "lpalm/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace lpalm {

namespace {

constexpr double kSumTol = 1e-12;

void require_distribution(const Eigen::Ref<const Eigen::RowVectorXd>& row, const std::string& what) {
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    if (!(row(i) >= 0.0) || !std::isfinite(row(i))) throw InputError(what + " has a negative or non-finite entry");
  }
  if (std::abs(row.sum() - 1.0) > kSumTol) throw InputError(what + " does not sum to 1");
}

}  // namespace

TabularMDP::TabularMDP(int n_states, int n_actions, Mat transition, Vec reward, Vec rho0, double gamma)
    : n_states_(n_states),
      n_actions_(n_actions),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      rho0_(std::move(rho0)),
      gamma_(gamma) {
  if (n_states < 1 || n_actions < 1) throw InputError("state and action counts must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("gamma must lie in (0, 1)");
  if (transition_.rows() != n_pairs() || transition_.cols() != n_states)
    throw InputError("transition must have shape (n_states*n_actions, n_states)");
  if (reward_.size() != n_pairs()) throw InputError("reward must have n_states*n_actions entries");
  if (rho0_.size() != n_states) throw InputError("rho0 must have n_states entries");
  if (!reward_.allFinite()) throw InputError("reward has a non-finite entry");
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      require_distribution(transition_.row(pair(s, a)),
                           "transition row (" + std::to_string(s) + "," + std::to_string(a) + ")");
  require_distribution(rho0_.transpose(), "rho0");
}

Vec TabularMDP::q_values(const Vec& V) const {
  if (V.size() != n_states_) throw InputError("value vector length does not match n_states");
  return reward_ + gamma_ * (transition_ * V);
}

void TabularMDP::check_state(int s) const {
  if (s < 0 || s >= n_states_) throw InputError("state index " + std::to_string(s) + " out of range");
}

void TabularMDP::check_action(int a) const {
  if (a < 0 || a >= n_actions_) throw InputError("action index " + std::to_string(a) + " out of range");
}

Policy::Policy(Mat probs) : probs_(std::move(probs)) {
  if (probs_.rows() < 1 || probs_.cols() < 1) throw InputError("policy must be non-empty");
  for (Eigen::Index s = 0; s < probs_.rows(); ++s)
    require_distribution(probs_.row(s), "policy row " + std::to_string(s));
}

Policy Policy::deterministic(std::span<const int> actions, int n_actions) {
  Mat p = Mat::Zero(static_cast<Eigen::Index>(actions.size()), n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions) throw InputError("policy action out of range");
    p(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return Policy(std::move(p));
}

Policy Policy::uniform(int n_states, int n_actions) {
  return Policy(Mat::Constant(n_states, n_actions, 1.0 / n_actions));
}

int Policy::argmax(int s) const {
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < probs_.cols(); ++a)
    if (probs_(s, a) > probs_(s, best)) best = a;
  return static_cast<int>(best);
}

Vec bellman_operator(const TabularMDP& mdp, const Vec& V) {
  const Vec q = mdp.q_values(V);
  const int A = mdp.n_actions();
  Vec out(mdp.n_states());
  for (int s = 0; s < mdp.n_states(); ++s) out(s) = q.segment(s * A, A).maxCoeff();
  return out;
}

Sample sample_transition(const TabularMDP& mdp, int s, int a, Rng& rng) {
  mdp.check_state(s);
  mdp.check_action(a);
  const int row = mdp.pair(s, a);
  const Eigen::RowVectorXd p = mdp.transition().row(row);
  const int next = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
  return {next, mdp.reward()(row)};
}

Trajectory rollout(const TabularMDP& mdp, const Policy& policy, int horizon, Rng& rng) {
  if (horizon < 1) throw InputError("rollout horizon must be at least 1");
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
    throw InputError("policy shape does not match the MDP");
  Trajectory traj;
  const Vec& rho0 = mdp.rho0();
  traj.initial_state = rng.categorical(std::span<const double>(rho0.data(), static_cast<std::size_t>(rho0.size())));
  traj.tuples.reserve(static_cast<std::size_t>(horizon));
  int s = traj.initial_state;
  for (int t = 0; t < horizon; ++t) {
    const Eigen::RowVectorXd row = policy.probs().row(s);
    const int a = rng.categorical(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    const Sample smp = sample_transition(mdp, s, a, rng);
    traj.tuples.push_back({s, a, smp.reward, smp.s_next, 0.0, 1});
    s = smp.s_next;
  }
  return traj;
}

std::vector<TransitionTuple> multi_step_compress(std::span<const TransitionTuple> trajectory, int l,
                                                 double gamma) {
  if (l < 1) throw InputError("lookahead must be at least 1");
  for (std::size_t t = 0; t + 1 < trajectory.size(); ++t)
    if (trajectory[t].s_next != trajectory[t + 1].s) throw InputError("trajectory is not chained");
  const std::size_t n = trajectory.size();
  std::vector<TransitionTuple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(l), n - i);
    TransitionTuple t = trajectory[i];
    double r = 0.0, disc = 1.0;
    for (std::size_t j = 0; j < len; ++j) {
      r += disc * trajectory[i + j].r;
      disc *= gamma;
    }
    t.r = r;
    t.s_next = trajectory[i + len - 1].s_next;
    t.steps = static_cast<int>(len);
    out.push_back(t);
  }
  return out;
}

double discounted_return(std::span<const TransitionTuple> trajectory, double gamma) {
  double total = 0.0, disc = 1.0;
  for (const auto& t : trajectory) {
    total += disc * t.r;
    disc *= gamma;
  }
  return total;
}

namespace {

Mat policy_transition(const TabularMDP& mdp, const Policy& policy, Vec& r_pi) {
  const int S = mdp.n_states(), A = mdp.n_actions();
  if (policy.n_states() != S || policy.n_actions() != A) throw InputError("policy shape does not match the MDP");
  Mat P = Mat::Zero(S, S);
  r_pi = Vec::Zero(S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      const double pa = policy.probs()(s, a);
      if (pa == 0.0) continue;
      P.row(s) += pa * mdp.transition().row(mdp.pair(s, a));
      r_pi(s) += pa * mdp.reward()(mdp.pair(s, a));
    }
  return P;
}

}  // namespace

Vec evaluate_policy(const TabularMDP& mdp, const Policy& policy) {
  Vec r_pi;
  const Mat P = policy_transition(mdp, policy, r_pi);
  const Mat system = Mat::Identity(mdp.n_states(), mdp.n_states()) - mdp.gamma() * P;
  return system.partialPivLu().solve(r_pi);
}

double finite_horizon_return(const TabularMDP& mdp, const Policy& policy, int horizon) {
  Vec r_pi;
  const Mat P = policy_transition(mdp, policy, r_pi);
  Eigen::RowVectorXd d = mdp.rho0().transpose();
  double total = 0.0;
  for (int t = 0; t < horizon; ++t) {
    total += d.dot(r_pi);
    d = d * P;
  }
  return total;
}

namespace {

constexpr const char* kMdpHeader = "# lpalm tabular mdp v1";

void write_values(std::ostream& out, const char* key, const double* data, Eigen::Index n) {
  out << key;
  char buf[40];
  for (Eigen::Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, " %.17g", data[i]);
    out << buf;
  }
  out << '\n';
}

}  // namespace

void write_mdp(std::ostream& out, const TabularMDP& mdp) {
  out << kMdpHeader << '\n';
  out << "n_states " << mdp.n_states() << '\n';
  out << "n_actions " << mdp.n_actions() << '\n';
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", mdp.gamma());
  out << "gamma " << buf << '\n';
  write_values(out, "reward", mdp.reward().data(), mdp.reward().size());
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> P = mdp.transition();
  write_values(out, "transition", P.data(), P.size());
  write_values(out, "rho0", mdp.rho0().data(), mdp.rho0().size());
}

TabularMDP read_mdp(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMdpHeader) throw InputError("not a tabular mdp file");
  int S = 0, A = 0;
  double gamma = 0.0;
  std::vector<double> reward, transition, rho0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto read_list = [&](std::vector<double>& dst) {
      double v;
      while (ls >> v) dst.push_back(v);
      if (!ls.eof()) throw InputError("malformed number in field " + key);
    };
    if (key == "n_states") ls >> S;
    else if (key == "n_actions") ls >> A;
    else if (key == "gamma") ls >> gamma;
    else if (key == "reward") read_list(reward);
    else if (key == "transition") read_list(transition);
    else if (key == "rho0") read_list(rho0);
    else throw InputError("unknown mdp field " + key);
    if (ls.fail() && !ls.eof()) throw InputError("malformed field " + key);
  }
  if (S < 1 || A < 1) throw InputError("mdp file is missing n_states or n_actions");
  const auto SA = static_cast<std::size_t>(S) * static_cast<std::size_t>(A);
  if (reward.size() != SA || transition.size() != SA * static_cast<std::size_t>(S) ||
      rho0.size() != static_cast<std::size_t>(S))
    throw InputError("mdp file arrays have the wrong length");
  Mat P = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      transition.data(), static_cast<Eigen::Index>(SA), S);
  Vec r = Eigen::Map<Vec>(reward.data(), static_cast<Eigen::Index>(SA));
  Vec rho = Eigen::Map<Vec>(rho0.data(), S);
  return TabularMDP(S, A, std::move(P), std::move(r), std::move(rho), gamma);
}

void save_mdp(const std::string& path, const TabularMDP& mdp) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_mdp(out, mdp);
}

TabularMDP load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open mdp file " + path);
  return read_mdp(in);
}

}  // namespace lpalm
