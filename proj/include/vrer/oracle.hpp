#pragma once

#include <Eigen/Dense>

#include "vrer/env.hpp"
#include "vrer/policy.hpp"

namespace vrer {

// Exact quantities of a ChainMDP under a tabular softmax policy, obtained by
// linear solves: stationary state distribution of the induced chain,
// discounted V and Q, and the stationary-weighted discounted return.
struct ExactSolution {
  Vec stationary;  // d[s], sums to 1
  Vec values;      // V[s]
  Vec q_values;    // Q[s*A + a]
  double objective = 0.0;
};

inline ExactSolution exact_solution(const ChainMDP& mdp, const PolicyParams& policy) {
  check(policy.kind == PolicyKind::tabular_softmax, "oracle requires a tabular softmax policy");
  const int S = mdp.num_states(), A = mdp.num_actions();
  check(policy.layers.front() == S && policy.layers.back() == A,
        "policy shape does not match the MDP");

  Eigen::MatrixXd P_pi(S, S);
  Eigen::VectorXd r_pi(S);
  std::vector<Vec> pi(S);
  for (int s = 0; s < S; ++s) {
    pi[s] = action_probabilities(policy, mdp.one_hot(s));
    double rs = 0.0;
    for (int t = 0; t < S; ++t) {
      double p = 0.0;
      for (int a = 0; a < A; ++a) p += pi[s][a] * mdp.transition(s, a, t);
      P_pi(s, t) = p;
    }
    for (int a = 0; a < A; ++a) rs += pi[s][a] * mdp.reward(s, a);
    r_pi(s) = rs;
  }

  // d^T P = d^T, sum d = 1: replace one balance equation by the normalizer.
  Eigen::MatrixXd M = P_pi.transpose() - Eigen::MatrixXd::Identity(S, S);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
  M.row(S - 1).setOnes();
  rhs(S - 1) = 1.0;
  Eigen::VectorXd d = M.partialPivLu().solve(rhs);

  Eigen::MatrixXd bellman = Eigen::MatrixXd::Identity(S, S) - mdp.gamma() * P_pi;
  Eigen::VectorXd V = bellman.partialPivLu().solve(r_pi);

  ExactSolution out;
  out.stationary.assign(d.data(), d.data() + S);
  out.values.assign(V.data(), V.data() + S);
  out.q_values.resize(static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double q = mdp.reward(s, a);
      for (int t = 0; t < S; ++t) q += mdp.gamma() * mdp.transition(s, a, t) * V(t);
      out.q_values[static_cast<std::size_t>(s) * A + a] = q;
    }
  out.objective = d.dot(V);
  return out;
}

// Expected discounted return with the state weighted by its stationary
// visitation under the policy.
inline double exact_objective(const ChainMDP& mdp, const PolicyParams& policy) {
  return exact_solution(mdp, policy).objective;
}

// Full-summation advantage-weighted score expectation over the stationary
// state distribution, scaled by the effective horizon 1/(1-gamma).  When the
// transition tensor is action-independent this is the exact gradient of
// exact_objective; in general the stationary distribution's own dependence
// on the policy is not differentiated.
inline Vec exact_policy_gradient(const ChainMDP& mdp, const PolicyParams& policy) {
  const ExactSolution sol = exact_solution(mdp, policy);
  const int S = mdp.num_states(), A = mdp.num_actions();
  Vec grad(policy.dim(), 0.0);
  for (int s = 0; s < S; ++s) {
    const Vec pi = action_probabilities(policy, mdp.one_hot(s));
    for (int a = 0; a < A; ++a) {
      const double adv = sol.q_values[static_cast<std::size_t>(s) * A + a] - sol.values[s];
      const double w = sol.stationary[s] * pi[a] * adv;
      for (int b = 0; b < A; ++b)
        grad[static_cast<std::size_t>(s) * A + b] += w * ((a == b ? 1.0 : 0.0) - pi[b]);
    }
  }
  scale(grad, 1.0 / (1.0 - mdp.gamma()));
  return grad;
}

}  // namespace vrer
