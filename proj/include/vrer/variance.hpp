#pragma once

#include <optional>
#include <span>

#include "vrer/estimators.hpp"
#include "vrer/math.hpp"
#include "vrer/replay.hpp"

namespace vrer {

// Raw Adam moment accumulators.  Bias-corrected views are derived on read.
struct AdamMoments {
  Vec m_raw;
  Vec v_raw;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;

  static AdamMoments zeros(std::size_t dim, double beta1 = 0.9, double beta2 = 0.999) {
    AdamMoments m;
    m.m_raw.assign(dim, 0.0);
    m.v_raw.assign(dim, 0.0);
    m.beta1 = beta1;
    m.beta2 = beta2;
    return m;
  }
};

inline void adam_update(AdamMoments& moments, const Vec& gradient) {
  check(gradient.size() == moments.m_raw.size(), "gradient dimension mismatch");
  ++moments.step;
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    const double g = gradient[i];
    moments.m_raw[i] = moments.beta1 * moments.m_raw[i] + (1.0 - moments.beta1) * g;
    moments.v_raw[i] = moments.beta2 * moments.v_raw[i] + (1.0 - moments.beta2) * g * g;
  }
}

inline Vec corrected_first_moment(const AdamMoments& m) {
  check(m.step >= 1, "no updates recorded yet");
  Vec out = m.m_raw;
  scale(out, 1.0 / (1.0 - std::pow(m.beta1, static_cast<double>(m.step))));
  return out;
}

inline Vec corrected_second_moment(const AdamMoments& m) {
  check(m.step >= 1, "no updates recorded yet");
  Vec out = m.v_raw;
  scale(out, 1.0 / (1.0 - std::pow(m.beta2, static_cast<double>(m.step))));
  return out;
}

// Relative variance zeta = sum(max(v - m^2, 0)) / (sum(m^2) + guard), the
// free byproduct estimate of gradient noise held by the Adam moments.
inline double relative_variance(const AdamMoments& moments) {
  check(moments.step >= 1, "no updates recorded yet");
  const Vec m = corrected_first_moment(moments);
  const Vec v = corrected_second_moment(moments);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    num += std::max(v[i] - m[i] * m[i], 0.0);
    den += m[i] * m[i];
  }
  return std::max(num / (den + 1e-12), 0.0);
}

struct VarianceReport {
  double trace_variance = 0.0;
  std::size_t block_length = 0;
  std::size_t sample_count = 0;
};

// Growing slower than n, per the block-bootstrap consistency conditions.
inline std::size_t default_block_length(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::cbrt(
                                      static_cast<double>(n)))));
}

// Moving-block trace-variance plug-in: (l/n) * [mean_j ||bbar_j||^2 -
// ||mean_j bbar_j||^2] over the N = n-l+1 overlapping block means bbar_j.
// The formula depends only on the block means, so no resampling is done.
inline VarianceReport mbb_trace_variance(std::span<const Vec> per_sample_gradients,
                                         std::size_t block_length) {
  const std::size_t n = per_sample_gradients.size();
  check(n >= 1, "need at least one per-sample gradient");
  check(block_length >= 1 && block_length <= n, "block length must lie in [1, n]");
  const std::size_t dim = per_sample_gradients.front().size();
  const std::size_t l = block_length;
  const std::size_t N = n - l + 1;

  Vec window(dim, 0.0);
  for (std::size_t j = 0; j < l; ++j) {
    check(per_sample_gradients[j].size() == dim, "inconsistent gradient dimensions");
    axpy(1.0, per_sample_gradients[j], window);
  }
  Vec grand(dim, 0.0);
  double sq_sum = 0.0;
  const double inv_l = 1.0 / static_cast<double>(l);
  for (std::size_t j = 0;; ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double bm = window[i] * inv_l;
      sq += bm * bm;
      grand[i] += bm;
    }
    sq_sum += sq;
    if (j + 1 == N) break;
    check(per_sample_gradients[j + l].size() == dim, "inconsistent gradient dimensions");
    for (std::size_t i = 0; i < dim; ++i)
      window[i] += per_sample_gradients[j + l][i] - per_sample_gradients[j][i];
  }
  const double invN = 1.0 / static_cast<double>(N);
  double grand_sq = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double gm = grand[i] * invN;
    grand_sq += gm * gm;
  }
  VarianceReport rep;
  rep.block_length = l;
  rep.sample_count = n;
  rep.trace_variance =
      (static_cast<double>(l) / static_cast<double>(n)) * (sq_sum * invN - grand_sq);
  return rep;
}

// Per-sample gradient streams backing Selection Rule 1: the candidate batch
// contributes LR (or CLR, when a cap is given) weighted scenario gradients,
// the current batch plain ones.  Both in collection order.
inline std::vector<Vec> weighted_sample_gradients(const PolicyParams& policy,
                                                  const IterationBatch& batch,
                                                  std::optional<double> cap,
                                                  RatioStats* stats = nullptr) {
  check(batch.advantages.size() == batch.size(), "batch is missing frozen advantages");
  std::vector<Vec> grads;
  grads.reserve(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    TaggedSample s;
    s.transition = batch.transitions[j];
    s.behavior_index = batch.iteration_index;
    s.advantage = batch.advantages[j];
    double w = likelihood_ratio(policy, s, stats);
    if (cap) w = clip_ratio(w, *cap);
    Vec g = score(policy, s.transition.state, s.transition.action);
    scale(g, w * s.advantage);
    grads.push_back(std::move(g));
  }
  return grads;
}

inline std::vector<Vec> plain_sample_gradients(const PolicyParams& policy,
                                               const IterationBatch& batch) {
  check(batch.advantages.size() == batch.size(), "batch is missing frozen advantages");
  std::vector<Vec> grads;
  grads.reserve(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    Vec g = score(policy, batch.transitions[j].state, batch.transitions[j].action);
    // 1.0 * adv keeps this path bit-identical to the weighted one at f = 1
    scale(g, 1.0 * batch.advantages[j]);
    grads.push_back(std::move(g));
  }
  return grads;
}

struct Rule1Statistics {
  double candidate_trace = 0.0;
  double pg_trace = 0.0;
};

inline Rule1Statistics rule1_statistics(const PolicyParams& policy,
                                        const IterationBatch& candidate,
                                        const IterationBatch& current,
                                        std::optional<double> cap, std::size_t block_length = 0,
                                        RatioStats* stats = nullptr) {
  check(candidate.size() >= 1 && current.size() >= 1, "batches must be nonempty");
  const auto cand = weighted_sample_gradients(policy, candidate, cap, stats);
  const auto cur = plain_sample_gradients(policy, current);
  const std::size_t lc = block_length ? block_length : default_block_length(cand.size());
  const std::size_t lp = block_length ? block_length : default_block_length(cur.size());
  Rule1Statistics out;
  out.candidate_trace = mbb_trace_variance(cand, std::min(lc, cand.size())).trace_variance;
  out.pg_trace = mbb_trace_variance(cur, std::min(lp, cur.size())).trace_variance;
  return out;
}

// Second-order approximation of Tr Var[LR] / Tr Var[PG]:
// exp(mean KL) * (1 + 1/zeta) - 1/zeta.  Always >= 1.
inline double variance_ratio_approx(double mean_kl, double zeta) {
  check(zeta > 0.0, "zeta must be positive");
  check(mean_kl >= 0.0, "mean KL must be nonnegative");
  const double inv = 1.0 / zeta;
  return std::exp(mean_kl) * (1.0 + inv) - inv;
}

}  // namespace vrer
