#pragma once

#include <fstream>
#include <sstream>

#include "vrer/math.hpp"
#include "vrer/policy.hpp"

namespace vrer {

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool terminal = false;
};

// Cart-pole balancing task with the standard benchmark constants and a
// semi-implicit Euler integrator.  Reward is +1 per step; an episode ends
// when the cart or pole leaves its band or after max_steps steps.
class CartPoleEnv {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kForceMag = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kThetaLimit = 12.0 * M_PI / 180.0;
  static constexpr double kXLimit = 2.4;

  explicit CartPoleEnv(int max_steps = 500) : max_steps_(max_steps) {}

  int observation_dim() const { return 4; }
  int num_actions() const { return 2; }

  Vec reset(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ud(-0.05, 0.05);
    state_ = {ud(rng), ud(rng), ud(rng), ud(rng)};
    step_count_ = 0;
    done_ = false;
    return state_;
  }

  StepResult step(const Action& action) {
    check(!done_, "step() called on a terminal episode");
    check(action.is_discrete() && action.index < 2, "cart-pole action must be 0 or 1");
    const double force = action.index == 1 ? kForceMag : -kForceMag;
    const double x = state_[0], x_dot = state_[1], theta = state_[2], theta_dot = state_[3];
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double total_mass = kMassCart + kMassPole;
    const double pole_ml = kMassPole * kHalfLength;

    const double temp = (force + pole_ml * theta_dot * theta_dot * sin_t) / total_mass;
    const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                             (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / total_mass));
    const double x_acc = temp - pole_ml * theta_acc * cos_t / total_mass;

    // Semi-implicit: velocities first, positions with the updated velocities.
    state_[1] = x_dot + kTau * x_acc;
    state_[0] = x + kTau * state_[1];
    state_[3] = theta_dot + kTau * theta_acc;
    state_[2] = theta + kTau * state_[3];
    ++step_count_;

    done_ = std::abs(state_[0]) > kXLimit || std::abs(state_[2]) > kThetaLimit ||
            step_count_ >= max_steps_;
    return {state_, 1.0, done_};
  }

  const Vec& state() const { return state_; }
  bool done() const { return done_; }
  int step_count() const { return step_count_; }
  int max_steps() const { return max_steps_; }

 private:
  int max_steps_;
  Vec state_{0, 0, 0, 0};
  int step_count_ = 0;
  bool done_ = true;
};

// Finite ergodic MDP.  A uniform mixing floor eps is blended into every
// transition row so the chain is uniformly ergodic under any policy.
// States are exposed as one-hot vectors; episodes never terminate.
class ChainMDP {
 public:
  ChainMDP(int num_states, int num_actions, double gamma, double eps, Vec transition_raw,
           Vec reward_table)
      : S_(num_states),
        A_(num_actions),
        gamma_(gamma),
        eps_(eps),
        P_(std::move(transition_raw)),
        r_(std::move(reward_table)) {
    check(S_ >= 1 && A_ >= 1, "state and action counts must be positive");
    check(gamma_ > 0.0 && gamma_ < 1.0, "discount must lie in (0,1)");
    check(eps_ > 0.0 && eps_ <= 1.0, "mixing floor must lie in (0,1]");
    check(P_.size() == static_cast<std::size_t>(S_) * A_ * S_, "transition tensor size mismatch");
    check(r_.size() == static_cast<std::size_t>(S_) * A_, "reward table size mismatch");
    for (int s = 0; s < S_; ++s)
      for (int a = 0; a < A_; ++a) {
        double row = 0.0;
        for (int t = 0; t < S_; ++t) {
          const double p = P_[idx(s, a, t)];
          check(p >= 0.0, "transition probabilities must be nonnegative");
          row += p;
        }
        check(std::abs(row - 1.0) < 1e-9, "transition row does not sum to 1");
        for (int t = 0; t < S_; ++t)
          P_[idx(s, a, t)] = (1.0 - eps_) * P_[idx(s, a, t)] + eps_ / S_;
      }
  }

  int num_states() const { return S_; }
  int num_actions() const { return A_; }
  double gamma() const { return gamma_; }
  double mixing_floor() const { return eps_; }
  int observation_dim() const { return S_; }

  // Blended transition probability P[s,a,s'].
  double transition(int s, int a, int t) const { return P_[idx(s, a, t)]; }
  double reward(int s, int a) const { return r_[static_cast<std::size_t>(s) * A_ + a]; }

  Vec one_hot(int s) const {
    Vec v(S_, 0.0);
    v[s] = 1.0;
    return v;
  }

  Vec reset(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ud(0, S_ - 1);
    state_ = ud(rng);
    return one_hot(state_);
  }

  StepResult step(const Action& action, std::mt19937_64& rng) {
    check(action.is_discrete() && action.index < A_, "invalid action index");
    const int a = action.index;
    const double reward_sa = reward(state_, a);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    double u = ud(rng), acc = 0.0;
    int next = S_ - 1;
    for (int t = 0; t < S_; ++t) {
      acc += transition(state_, a, t);
      if (u <= acc) {
        next = t;
        break;
      }
    }
    state_ = next;
    return {one_hot(state_), reward_sa, false};
  }

  int state_index() const { return state_; }
  Vec state() const { return one_hot(state_); }

  // Plain-text definition: S A gamma eps, then P[s,a,s'] row-major,
  // then r[s,a] row-major; whitespace separated, '#' starts a comment.
  static ChainMDP from_file(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "cannot open MDP file " + path);
    return from_stream(is);
  }

  static ChainMDP from_stream(std::istream& is) {
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) tokens.push_back(tok);
    }
    check(tokens.size() >= 4, "MDP file is missing its header");
    std::size_t pos = 0;
    auto next = [&]() -> double {
      check(pos < tokens.size(), "MDP file ended early");
      return std::stod(tokens[pos++]);
    };
    const int S = static_cast<int>(next());
    const int A = static_cast<int>(next());
    const double gamma = next();
    const double eps = next();
    Vec P(static_cast<std::size_t>(S) * A * S);
    for (double& v : P) v = next();
    Vec r(static_cast<std::size_t>(S) * A);
    for (double& v : r) v = next();
    check(pos == tokens.size(), "trailing tokens in MDP file");
    return ChainMDP(S, A, gamma, eps, std::move(P), std::move(r));
  }

 private:
  std::size_t idx(int s, int a, int t) const {
    return (static_cast<std::size_t>(s) * A_ + a) * S_ + t;
  }

  int S_, A_;
  double gamma_, eps_;
  Vec P_;  // blended with the mixing floor
  Vec r_;
  int state_ = 0;
};

}  // namespace vrer
