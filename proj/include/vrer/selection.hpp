#pragma once

#include <optional>

#include "vrer/replay.hpp"
#include "vrer/variance.hpp"

namespace vrer {

enum class SelectionRule { bootstrap, kl_approx };

struct SelectionConfig {
  SelectionRule rule = SelectionRule::kl_approx;
  double c = 1.05;                 // variance-inflation constant, > 1
  std::optional<double> clip_cap;  // CLR statistics when set
  std::size_t block_length = 0;    // 0: floor(n^(1/3))
  std::size_t kl_state_sample = 64;  // 0: use every stored state
};

// Accept a candidate batch when its weighted-gradient trace variance is at
// most c times the current batch's plain trace variance (inclusive).
inline bool rule1_accept(const PolicyParams& policy, const IterationBatch& candidate,
                         const IterationBatch& current, const SelectionConfig& config,
                         Rule1Statistics* stats_out = nullptr, RatioStats* ratio_stats = nullptr) {
  const Rule1Statistics st = rule1_statistics(policy, candidate, current, config.clip_cap,
                                              config.block_length, ratio_stats);
  if (stats_out) *stats_out = st;
  return st.candidate_trace <= config.c * st.pg_trace;
}

// Dynamic KL threshold of Selection Rule 2; tends to log(c) as zeta grows
// and to 0 as c -> 1 or zeta -> 0.
inline double rule2_threshold(double c, double zeta_hat) {
  check(zeta_hat >= 0.0, "zeta must be nonnegative");
  return std::log(1.0 + (c - 1.0) * zeta_hat / (zeta_hat + 1.0));
}

inline bool rule2_accept(const PolicyParams& target, const PolicyParams& behavior,
                         const std::vector<Vec>& states, double zeta_hat, double c,
                         double* kl_out = nullptr, double* threshold_out = nullptr) {
  const double kl = mean_kl(target, behavior, states);
  const double threshold = rule2_threshold(c, zeta_hat);
  if (kl_out) *kl_out = kl;
  if (threshold_out) *threshold_out = threshold;
  return kl <= threshold;
}

// One row of the per-candidate decision log.
struct DecisionRecord {
  int iteration = 0;
  int candidate = 0;
  double statistic = 0.0;
  double threshold = 0.0;
  bool accepted = false;
};

namespace detail {

// Deterministic strided subsample of a batch's states for the KL average.
inline std::vector<Vec> kl_states(const IterationBatch& batch, std::size_t max_states) {
  const std::size_t n = batch.size();
  if (max_states == 0 || n <= max_states) {
    std::vector<Vec> out;
    out.reserve(n);
    for (const auto& t : batch.transitions) out.push_back(t.state);
    return out;
  }
  std::vector<Vec> out;
  out.reserve(max_states);
  for (std::size_t j = 0; j < max_states; ++j)
    out.push_back(batch.transitions[j * n / max_states].state);
  return out;
}

}  // namespace detail

// Scans every buffered batch against the configured rule.  The newest batch
// is the current iteration; it passes both rules trivially and is always a
// member.  Every buffer index appears exactly once in the decision log.
inline ReuseSet build_reuse_set(const ReplayBuffer& buffer, const PolicyParams& policy,
                                const SelectionConfig& config, double zeta_hat,
                                std::vector<DecisionRecord>* log = nullptr,
                                RatioStats* ratio_stats = nullptr) {
  check(!buffer.empty(), "buffer must contain the current batch");
  const IterationBatch& current = buffer.newest();
  const int k = current.iteration_index;

  ReuseSet reuse;
  for (const IterationBatch& candidate : buffer) {
    DecisionRecord rec;
    rec.iteration = k;
    rec.candidate = candidate.iteration_index;
    if (config.rule == SelectionRule::bootstrap) {
      Rule1Statistics st;
      rec.accepted = rule1_accept(policy, candidate, current, config, &st, ratio_stats);
      rec.statistic = st.candidate_trace;
      rec.threshold = config.c * st.pg_trace;
    } else {
      check(candidate.snapshot != nullptr, "candidate batch is missing its snapshot");
      rec.accepted = rule2_accept(policy, candidate.snapshot->params,
                                  detail::kl_states(candidate, config.kl_state_sample), zeta_hat,
                                  config.c, &rec.statistic, &rec.threshold);
    }
    if (candidate.iteration_index == k) rec.accepted = true;
    if (rec.accepted) reuse.member_indices.insert(candidate.iteration_index);
    if (log) log->push_back(rec);
  }
  return reuse;
}

}  // namespace vrer
