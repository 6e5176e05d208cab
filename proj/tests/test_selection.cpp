#include <catch2/catch_amalgamated.hpp>

#include "vrer/selection.hpp"

using namespace vrer;
using Catch::Approx;

namespace {

PolicyParams bandit_policy(Vec logits) {
  PolicyParams p = PolicyParams::tabular(1, static_cast<int>(logits.size()));
  p.weights = std::move(logits);
  return p;
}

IterationBatch bandit_batch(int index, const PolicyParams& behavior,
                            const std::vector<int>& actions, double advantage = 1.0) {
  IterationBatch b;
  b.iteration_index = index;
  b.snapshot = make_snapshot(behavior, index);
  for (int a : actions) {
    Transition t;
    t.state = {1.0};
    t.action = Action::discrete(a);
    t.behavior_log_prob = log_prob(behavior, t.state, t.action);
    b.transitions.push_back(std::move(t));
    b.advantages.push_back(advantage);
    b.return_targets.push_back(0.0);
  }
  return b;
}

std::vector<int> alternating(int n) {
  std::vector<int> a(n);
  for (int i = 0; i < n; ++i) a[i] = i % 2;
  return a;
}

}  // namespace

TEST_CASE("rule 1 accepts the current batch against itself, boundary inclusive") {
  PolicyParams policy = bandit_policy({0.3, -0.3});
  IterationBatch batch = bandit_batch(4, policy, alternating(48));
  SelectionConfig cfg;
  cfg.rule = SelectionRule::bootstrap;
  cfg.c = 1.0;  // equality is the boundary; "no greater than" keeps it in
  Rule1Statistics st;
  CHECK(rule1_accept(policy, batch, batch, cfg, &st));
  CHECK(st.candidate_trace == st.pg_trace);
}

TEST_CASE("rule 1 rejects a constructed high-variance candidate at c = 1.05") {
  PolicyParams target = bandit_policy({0.0, 0.0});
  PolicyParams behavior = bandit_policy({4.6, 0.0});
  std::vector<int> spike(64, 0);
  spike[40] = 1;
  IterationBatch current = bandit_batch(9, target, alternating(64));
  IterationBatch candidate = bandit_batch(2, behavior, spike);
  SelectionConfig cfg;
  cfg.rule = SelectionRule::bootstrap;
  cfg.c = 1.05;
  CHECK_FALSE(rule1_accept(target, candidate, current, cfg));
}

TEST_CASE("rule 2 thresholds") {
  CHECK(rule2_threshold(1.0, 5.0) == 0.0);
  CHECK(rule2_threshold(1.05, 1e15) == Approx(std::log(1.05)).epsilon(1e-9));
  CHECK(std::log(1.05) == Approx(0.0487901642).epsilon(1e-7));
  // monotone increasing in zeta
  double prev = -1.0;
  for (double zeta : {0.0, 0.1, 1.0, 10.0, 1e4}) {
    const double th = rule2_threshold(1.05, zeta);
    CHECK(th >= prev);
    prev = th;
  }
}

TEST_CASE("rule 2 acceptance") {
  PolicyParams target = bandit_policy({0.4, 0.0});
  const std::vector<Vec> states{{1.0}};

  // identical behavior: KL = 0 passes any threshold, boundary inclusive
  CHECK(rule2_accept(target, target, states, 0.0, 1.0));
  CHECK(rule2_accept(target, target, states, 7.0, 1.05));

  // c = 1: only the target policy itself is accepted
  PolicyParams nearby = bandit_policy({0.41, 0.0});
  CHECK_FALSE(rule2_accept(target, nearby, states, 5.0, 1.0));

  // zeta -> inf: threshold -> ln(1.05) ~= 0.0488; a 0.06-KL candidate fails
  PolicyParams behavior = bandit_policy({0.0, 0.0});
  double delta = 0.0;
  // binary-search a logit offset whose KL is about 0.06
  double lo = 0.0, hi = 2.0;
  for (int it = 0; it < 60; ++it) {
    delta = 0.5 * (lo + hi);
    behavior.weights = {target.weights[0] + delta, 0.0};
    (mean_kl(target, behavior, states) < 0.06 ? lo : hi) = delta;
  }
  double kl = 0.0, threshold = 0.0;
  CHECK_FALSE(rule2_accept(target, behavior, states, 1e15, 1.05, &kl, &threshold));
  CHECK(kl == Approx(0.06).margin(1e-6));
  CHECK(threshold == Approx(std::log(1.05)).epsilon(1e-9));
}

TEST_CASE("reuse set over a single-batch buffer is the current iteration") {
  PolicyParams policy = bandit_policy({0.2, 0.1});
  ReplayBuffer buffer(8);
  buffer.push(bandit_batch(3, policy, alternating(16)));
  SelectionConfig cfg;
  std::vector<DecisionRecord> log;
  const ReuseSet reuse = build_reuse_set(buffer, policy, cfg, 1.0, &log);
  CHECK(reuse.member_indices == std::set<int>{3});
  REQUIRE(log.size() == 1);
  CHECK(log[0].accepted);
}

TEST_CASE("identical snapshots are all accepted (full reuse)") {
  PolicyParams policy = bandit_policy({0.5, -0.5});
  ReplayBuffer buffer(8);
  for (int k = 1; k <= 6; ++k) buffer.push(bandit_batch(k, policy, alternating(24)));
  SelectionConfig cfg;
  cfg.c = 1.05;
  const ReuseSet reuse = build_reuse_set(buffer, policy, cfg, 3.0);
  CHECK(reuse.size() == 6);
}

TEST_CASE("decision log covers every buffer index exactly once") {
  PolicyParams policy = bandit_policy({0.0, 0.0});
  ReplayBuffer buffer(10);
  for (int k = 2; k <= 9; ++k) {
    PolicyParams snap = bandit_policy({0.05 * k, 0.0});
    buffer.push(bandit_batch(k, snap, alternating(12)));
  }
  SelectionConfig cfg;
  std::vector<DecisionRecord> log;
  build_reuse_set(buffer, policy, cfg, 2.0, &log);
  REQUIRE(log.size() == buffer.size());
  std::set<int> seen;
  for (const auto& rec : log) {
    CHECK(rec.iteration == 9);
    CHECK(seen.insert(rec.candidate).second);
  }
}

TEST_CASE("the current iteration is always selected") {
  // make the current batch's own snapshot deliberately stale so only the
  // always-include rule can admit it
  PolicyParams policy = bandit_policy({3.0, 0.0});
  PolicyParams stale = bandit_policy({-3.0, 0.0});
  ReplayBuffer buffer(4);
  buffer.push(bandit_batch(1, stale, alternating(12)));
  SelectionConfig cfg;
  cfg.c = 1.0 + 1e-9;
  const ReuseSet reuse = build_reuse_set(buffer, policy, cfg, 1.0);
  CHECK(reuse.contains(1));
}

TEST_CASE("reuse sets are nested in c on a drifting-policy buffer") {
  // snapshots drift linearly; the latest is the target
  ReplayBuffer buffer(32);
  const int K = 20;
  for (int k = 1; k <= K; ++k) {
    PolicyParams snap = bandit_policy({0.06 * k, 0.0});
    buffer.push(bandit_batch(k, snap, alternating(20)));
  }
  PolicyParams target = bandit_policy({0.06 * K, 0.0});
  const Vec grid{1.001, 1.02, 1.04, 1.06, 1.08, 1.10, 1.20, 1.40, 1.60};
  const double zeta = 4.0;

  std::vector<std::set<int>> sets;
  for (double c : grid) {
    SelectionConfig cfg;
    cfg.c = c;
    sets.push_back(build_reuse_set(buffer, target, cfg, zeta).member_indices);
  }
  for (std::size_t i = 0; i + 1 < sets.size(); ++i) {
    CHECK(std::includes(sets[i + 1].begin(), sets[i + 1].end(), sets[i].begin(), sets[i].end()));
    CHECK(sets[i].size() <= sets[i + 1].size());
  }
  // the drift produces partial acceptance somewhere on the grid
  CHECK(sets.front().size() < sets.back().size());
  CHECK(sets.back().size() <= static_cast<std::size_t>(K));
}

TEST_CASE("rule 1 based reuse set with clipped statistics") {
  PolicyParams policy = bandit_policy({0.1, -0.1});
  ReplayBuffer buffer(6);
  for (int k = 1; k <= 3; ++k) {
    PolicyParams snap = bandit_policy({0.1 + 0.02 * k, -0.1});
    buffer.push(bandit_batch(k, snap, alternating(32)));
  }
  SelectionConfig cfg;
  cfg.rule = SelectionRule::bootstrap;
  cfg.c = 1.5;
  cfg.clip_cap = 2.0;
  std::vector<DecisionRecord> log;
  const ReuseSet reuse = build_reuse_set(buffer, policy, cfg, 0.0, &log);
  CHECK(reuse.contains(3));
  // the threshold is c times the current batch's pg trace for every candidate
  REQUIRE(log.size() == 3);
  for (const auto& rec : log) {
    CHECK(rec.threshold > 0.0);
    CHECK(rec.threshold == log[0].threshold);
    CHECK(rec.accepted == (rec.statistic <= rec.threshold || rec.candidate == 3));
  }
}
