#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>

#include "vrer/math.hpp"
#include "vrer/policy.hpp"
#include "vrer/replay.hpp"

namespace vrer {

// A training-set element: a stored transition tagged with the iteration that
// produced it, its frozen advantage, and the cached log-probability under
// the current target policy.
struct TaggedSample {
  Transition transition;
  int behavior_index = 0;
  double advantage = 0.0;
  double target_log_prob = std::numeric_limits<double>::quiet_NaN();
};

enum class EstimatorKind { PG, LR, CLR };

struct GradientEstimate {
  Vec vector;
  EstimatorKind estimator_kind = EstimatorKind::PG;
  std::set<int> source_indices;
  std::size_t sample_count = 0;
};

// Ratios that overflowed the exp() guard are capped at this sentinel and
// counted, so a run can report how often the tail was truncated.
struct RatioStats {
  std::uint64_t capped = 0;
  double cap = 1e30;
};

inline Vec scenario_gradient(const PolicyParams& policy, double advantage, const Vec& state,
                             const Action& action) {
  Vec g = score(policy, state, action);
  scale(g, advantage);
  return g;
}

// GAE: delta_t = r_t + gamma*V_{t+1}*(1-terminal_t) - V_t, accumulated with
// factor gamma*lambda and restarted at episode ends.  `values` carries one
// bootstrap entry beyond the rewards.
inline Vec gae_advantages(const Vec& rewards, const Vec& values,
                          const std::vector<std::uint8_t>& terminals, double gamma,
                          double lambda) {
  const std::size_t n = rewards.size();
  check(terminals.size() == n, "rewards/terminals length mismatch");
  check(values.size() == n + 1, "values must carry one bootstrap tail entry");
  Vec adv(n, 0.0);
  double acc = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double not_done = terminals[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * not_done - values[t];
    acc = delta + gamma * lambda * not_done * acc;
    adv[t] = acc;
  }
  return adv;
}

inline double clip_ratio(double ratio, double cap) {
  check(cap > 0.0, "ratio cap must be positive");
  return std::min(ratio, cap);
}

// Per-transition density ratio pi_target / pi_behavior, computed in log
// space.  Caches the target log-probability on the sample.
inline double likelihood_ratio(const PolicyParams& target, TaggedSample& sample,
                               RatioStats* stats = nullptr) {
  check(std::isfinite(sample.transition.behavior_log_prob),
        "behavior_log_prob must be finite");
  if (!std::isfinite(sample.target_log_prob))
    sample.target_log_prob = log_prob(target, sample.transition.state, sample.transition.action);
  const double log_ratio = sample.target_log_prob - sample.transition.behavior_log_prob;
  const double cap = stats ? stats->cap : 1e30;
  if (log_ratio > std::log(cap)) {
    if (stats) ++stats->capped;
    return cap;
  }
  return std::exp(log_ratio);
}

namespace detail {

// Shared accumulation for PG / LR / CLR: mean over samples of
// weight * advantage * score, with weight = 1 for PG.  Multiplying by an
// exact 1.0 keeps the PG path bit-identical to an LR path whose ratios
// are all one.
inline GradientEstimate weighted_mean_gradient(const PolicyParams& policy,
                                               std::span<TaggedSample> samples,
                                               EstimatorKind kind, std::optional<double> cap,
                                               RatioStats* stats) {
  check(!samples.empty(), "estimator needs at least one sample");
  GradientEstimate est;
  est.estimator_kind = kind;
  est.sample_count = samples.size();
  est.vector.assign(policy.dim(), 0.0);
  for (TaggedSample& s : samples) {
    est.source_indices.insert(s.behavior_index);
    double w = 1.0;
    if (kind != EstimatorKind::PG) {
      w = likelihood_ratio(policy, s, stats);
      if (cap) w = clip_ratio(w, *cap);
    }
    Vec g = score(policy, s.transition.state, s.transition.action);
    axpy(w * s.advantage, g, est.vector);
  }
  scale(est.vector, 1.0 / static_cast<double>(samples.size()));
  return est;
}

}  // namespace detail

// Classical on-policy estimator: mean of scenario gradients over the
// current batch.
inline GradientEstimate pg_estimate(const PolicyParams& policy, std::span<TaggedSample> samples) {
  return detail::weighted_mean_gradient(policy, samples, EstimatorKind::PG, std::nullopt,
                                        nullptr);
}

// Individual LR estimator over samples sharing one behavior policy.
inline GradientEstimate lr_individual(const PolicyParams& policy, std::span<TaggedSample> samples,
                                      RatioStats* stats = nullptr) {
  for (const TaggedSample& s : samples)
    check(s.behavior_index == samples.front().behavior_index,
          "lr_individual needs a single behavior index");
  return detail::weighted_mean_gradient(policy, samples, EstimatorKind::LR, std::nullopt, stats);
}

inline GradientEstimate clr_individual(const PolicyParams& policy, std::span<TaggedSample> samples,
                                       double cap, RatioStats* stats = nullptr) {
  for (const TaggedSample& s : samples)
    check(s.behavior_index == samples.front().behavior_index,
          "clr_individual needs a single behavior index");
  return detail::weighted_mean_gradient(policy, samples, EstimatorKind::CLR, cap, stats);
}

namespace detail {

inline GradientEstimate averaged_group_estimate(const PolicyParams& policy,
                                                std::span<TaggedSample> samples,
                                                EstimatorKind kind, std::optional<double> cap,
                                                RatioStats* stats) {
  check(!samples.empty(), "estimator needs at least one sample");
  std::map<int, std::vector<TaggedSample*>> groups;
  for (TaggedSample& s : samples) groups[s.behavior_index].push_back(&s);

  GradientEstimate est;
  est.estimator_kind = kind;
  est.sample_count = samples.size();
  est.vector.assign(policy.dim(), 0.0);
  for (auto& [index, members] : groups) {
    est.source_indices.insert(index);
    Vec group_sum(policy.dim(), 0.0);
    for (TaggedSample* s : members) {
      double w = likelihood_ratio(policy, *s, stats);
      if (cap) w = clip_ratio(w, *cap);
      Vec g = score(policy, s->transition.state, s->transition.action);
      axpy(w * s->advantage, g, group_sum);
    }
    axpy(1.0 / static_cast<double>(members.size()), group_sum, est.vector);
  }
  scale(est.vector, 1.0 / static_cast<double>(groups.size()));
  return est;
}

}  // namespace detail

// Eq.-style average over behavior groups of the individual LR estimators.
inline GradientEstimate lr_average(const PolicyParams& policy, std::span<TaggedSample> samples,
                                   RatioStats* stats = nullptr) {
  return detail::averaged_group_estimate(policy, samples, EstimatorKind::LR, std::nullopt, stats);
}

inline GradientEstimate clr_average(const PolicyParams& policy, std::span<TaggedSample> samples,
                                    double cap, RatioStats* stats = nullptr) {
  return detail::averaged_group_estimate(policy, samples, EstimatorKind::CLR, cap, stats);
}

}  // namespace vrer
