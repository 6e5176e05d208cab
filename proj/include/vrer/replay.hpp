#pragma once

#include <cstdio>
#include <deque>
#include <memory>
#include <ostream>
#include <set>
#include <utility>

#include "vrer/math.hpp"
#include "vrer/policy.hpp"

namespace vrer {

// One environment step recorded under the behavior policy that produced it.
struct Transition {
  Vec state;
  Action action;
  double reward = 0.0;
  Vec next_state;
  bool terminal = false;
  double behavior_log_prob = 0.0;  // log pi_i(a|s) at collection time
  double value_estimate = 0.0;     // critic output at collection time
};

// The n transitions collected under one policy snapshot: the unit of reuse.
// Transition order is collection order; the block bootstrap depends on it.
struct IterationBatch {
  int iteration_index = 0;
  std::shared_ptr<const PolicySnapshot> snapshot;
  std::vector<Transition> transitions;
  Vec advantages;      // frozen at collection (GAE under the collecting critic)
  Vec return_targets;  // critic regression targets, frozen at collection

  std::size_t size() const { return transitions.size(); }
};

// FIFO sequence of at most `capacity` iteration batches, oldest first.
// A batch and its policy snapshot are evicted together.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    check(capacity >= 1, "buffer capacity must be positive");
  }

  void push(IterationBatch batch) {
    check(batches_.empty() || batch.iteration_index > batches_.back().iteration_index,
          "iteration_index must exceed every index already stored");
    batches_.push_back(std::move(batch));
    while (batches_.size() > capacity_) batches_.pop_front();
  }

  // Dynamic capacity (B_k = ceil(k*xi)); shrinking evicts oldest batches.
  void set_capacity(std::size_t capacity) {
    check(capacity >= 1, "buffer capacity must be positive");
    capacity_ = capacity;
    while (batches_.size() > capacity_) batches_.pop_front();
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return batches_.size(); }
  bool empty() const { return batches_.empty(); }

  const IterationBatch& at(std::size_t pos) const { return batches_[pos]; }
  const IterationBatch& newest() const { return batches_.back(); }
  const IterationBatch& oldest() const { return batches_.front(); }

  const IterationBatch* find(int iteration_index) const {
    for (const auto& b : batches_)
      if (b.iteration_index == iteration_index) return &b;
    return nullptr;
  }
  bool contains(int iteration_index) const { return find(iteration_index) != nullptr; }

  auto begin() const { return batches_.begin(); }
  auto end() const { return batches_.end(); }

 private:
  std::size_t capacity_;
  std::deque<IterationBatch> batches_;
};

inline void buffer_push(ReplayBuffer& buffer, IterationBatch batch) {
  buffer.push(std::move(batch));
}

// Subset of buffered iterations selected for replay; always contains the
// current iteration.
struct ReuseSet {
  std::set<int> member_indices;

  bool contains(int i) const { return member_indices.count(i) > 0; }
  std::size_t size() const { return member_indices.size(); }
};

// With-replacement draw of n0 positions out of a batch of size n,
// deterministic in the seed.
inline std::vector<std::size_t> downsample_indices(std::size_t batch_size, std::size_t n0,
                                                   std::uint64_t seed) {
  check(batch_size >= 1, "cannot downsample an empty batch");
  check(n0 >= 1, "n0 must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dist(0, batch_size - 1);
  std::vector<std::size_t> idx(n0);
  for (auto& i : idx) i = dist(rng);
  return idx;
}

inline std::vector<Transition> downsample(const IterationBatch& batch, std::size_t n0,
                                          std::uint64_t seed) {
  std::vector<Transition> out;
  out.reserve(n0);
  for (std::size_t i : downsample_indices(batch.size(), n0, seed))
    out.push_back(batch.transitions[i]);
  return out;
}

// A drawn training-set element: which batch it came from and where.
struct TrainingDraw {
  int behavior_index = 0;
  std::size_t position = 0;
};

// Downsamples n0 transitions from every selected batch.  Per-batch seeds are
// derived from `seed` and the batch's iteration index, so the draw for batch
// i does not depend on which other batches were selected.
inline std::vector<TrainingDraw> build_training_draws(const ReplayBuffer& buffer,
                                                      const ReuseSet& reuse, std::size_t n0,
                                                      std::uint64_t seed) {
  check(!reuse.member_indices.empty(), "reuse set must be nonempty");
  std::vector<TrainingDraw> out;
  out.reserve(n0 * reuse.size());
  for (int i : reuse.member_indices) {
    const IterationBatch* batch = buffer.find(i);
    check(batch != nullptr, "reuse set references an evicted iteration");
    for (std::size_t pos : downsample_indices(batch->size(), n0, mix_seed(seed, i)))
      out.push_back({i, pos});
  }
  return out;
}

inline std::vector<std::pair<int, Transition>> build_training_set(const ReplayBuffer& buffer,
                                                                  const ReuseSet& reuse,
                                                                  std::size_t n0,
                                                                  std::uint64_t seed) {
  std::vector<std::pair<int, Transition>> out;
  const auto draws = build_training_draws(buffer, reuse, n0, seed);
  out.reserve(draws.size());
  for (const auto& d : draws)
    out.emplace_back(d.behavior_index, buffer.find(d.behavior_index)->transitions[d.position]);
  return out;
}

// Post-hoc analysis dump: one transition per line with its iteration index.
inline void write_buffer_snapshot(const ReplayBuffer& buffer, std::ostream& os) {
  char num[32];
  auto put = [&](double v) {
    std::snprintf(num, sizeof num, " %.17g", v);
    os << num;
  };
  for (const auto& batch : buffer) {
    for (const auto& t : batch.transitions) {
      os << batch.iteration_index;
      for (double s : t.state) put(s);
      if (t.action.is_discrete()) {
        put(static_cast<double>(t.action.index));
      } else {
        for (double a : t.action.continuous) put(a);
      }
      put(t.reward);
      put(t.behavior_log_prob);
      put(t.value_estimate);
      os << ' ' << (t.terminal ? 1 : 0) << '\n';
    }
  }
}

}  // namespace vrer
