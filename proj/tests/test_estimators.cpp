#include <catch2/catch_amalgamated.hpp>

#include "vrer/estimators.hpp"

using namespace vrer;
using Catch::Approx;

namespace {

TaggedSample make_sample(const PolicyParams& behavior, const Vec& state, const Action& action,
                         double advantage, int behavior_index) {
  TaggedSample s;
  s.transition.state = state;
  s.transition.action = action;
  s.transition.behavior_log_prob = log_prob(behavior, state, action);
  s.behavior_index = behavior_index;
  s.advantage = advantage;
  return s;
}

PolicyParams bandit_policy(Vec logits) {
  PolicyParams p = PolicyParams::tabular(1, static_cast<int>(logits.size()));
  p.weights = std::move(logits);
  return p;
}

}  // namespace

TEST_CASE("scenario gradient scales the score by the advantage") {
  PolicyParams p = bandit_policy({0.0, 0.0});
  const Vec s{1.0};
  const Vec zero = scenario_gradient(p, 0.0, s, Action::discrete(0));
  CHECK(norm(zero) == 0.0);

  const Vec two = scenario_gradient(p, 2.0, s, Action::discrete(0));
  CHECK(two[0] == Approx(1.0));
  CHECK(two[1] == Approx(-1.0));

  const Vec one = scenario_gradient(p, 1.0, s, Action::discrete(0));
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(two[i] == Approx(2.0 * one[i]));
}

TEST_CASE("gae reduces to one-step deltas at lambda zero") {
  const Vec rewards{1.0, 0.5, -0.2};
  const Vec values{0.3, 0.1, 0.7, 0.2};
  const std::vector<std::uint8_t> terminals{0, 0, 0};
  const double gamma = 0.9;
  const Vec adv = gae_advantages(rewards, values, terminals, gamma, 0.0);
  for (int t = 0; t < 3; ++t)
    CHECK(adv[t] == Approx(rewards[t] + gamma * values[t + 1] - values[t]));
}

TEST_CASE("gae with gamma=lambda=1 and zero values is the suffix sum") {
  const Vec rewards{1.0, 2.0, 3.0, 4.0};
  const Vec values(5, 0.0);
  const std::vector<std::uint8_t> terminals{0, 0, 0, 0};
  const Vec adv = gae_advantages(rewards, values, terminals, 1.0, 1.0);
  CHECK(adv[0] == Approx(10.0));
  CHECK(adv[1] == Approx(9.0));
  CHECK(adv[2] == Approx(7.0));
  CHECK(adv[3] == Approx(4.0));
}

TEST_CASE("gae truncates the accumulation at terminals") {
  const Vec rewards{1.0, 1.0, 1.0};
  const Vec values{0.0, 0.0, 0.0, 5.0};
  const std::vector<std::uint8_t> terminals{0, 1, 0};
  const Vec adv = gae_advantages(rewards, values, terminals, 1.0, 1.0);
  CHECK(adv[2] == Approx(6.0));  // bootstraps into the tail value
  CHECK(adv[1] == Approx(1.0));  // episode ended here
  CHECK(adv[0] == Approx(2.0));
  CHECK_THROWS_AS(gae_advantages(rewards, Vec(3, 0.0), terminals, 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("likelihood ratio closed forms") {
  PolicyParams target = bandit_policy({std::log(4.0), 0.0});  // probs (0.8, 0.2)
  PolicyParams behavior = bandit_policy({std::log(4.0), 0.0});
  const Vec s{1.0};

  TaggedSample same = make_sample(behavior, s, Action::discrete(0), 1.0, 1);
  CHECK(likelihood_ratio(target, same) == 1.0);

  PolicyParams behavior2 = bandit_policy({std::log(2.0 / 3.0), 0.0});  // probs (0.4, 0.6)
  TaggedSample shifted = make_sample(behavior2, s, Action::discrete(0), 1.0, 1);
  CHECK(likelihood_ratio(target, shifted) == Approx(2.0).epsilon(1e-12));
}

TEST_CASE("gaussian likelihood ratio matches direct density evaluation") {
  PolicyParams target = PolicyParams::mlp_continuous({1, 1}, 0.7);
  PolicyParams behavior = target;
  target.weights = {0.0, 0.4};    // mean 0.4 for input 0
  behavior.weights = {0.0, 0.1};  // mean 0.1
  const Vec s{0.0};
  const double a = 0.55, sigma = 0.7;
  TaggedSample sample = make_sample(behavior, s, Action::real({a}), 1.0, 1);
  const double expected =
      std::exp((a - 0.1) * (a - 0.1) / (2 * sigma * sigma) -
               (a - 0.4) * (a - 0.4) / (2 * sigma * sigma));
  CHECK(likelihood_ratio(target, sample) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("ratio overflow is capped and counted") {
  PolicyParams target = bandit_policy({800.0, 0.0});
  PolicyParams behavior = bandit_policy({-800.0, 0.0});
  const Vec s{1.0};
  TaggedSample sample = make_sample(behavior, s, Action::discrete(0), 1.0, 1);
  RatioStats stats;
  CHECK(likelihood_ratio(target, sample, &stats) == stats.cap);
  CHECK(stats.capped == 1);
}

TEST_CASE("clip_ratio") {
  CHECK(clip_ratio(5.0, 2.0) == 2.0);
  CHECK(clip_ratio(0.5, 2.0) == 0.5);
  CHECK(clip_ratio(2.0, 2.0) == 2.0);
  CHECK_THROWS_AS(clip_ratio(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("pg estimate basics") {
  PolicyParams p = bandit_policy({0.3, -0.1});
  const Vec s{1.0};
  std::vector<TaggedSample> one{make_sample(p, s, Action::discrete(1), 1.5, 4)};
  const GradientEstimate single = pg_estimate(p, one);
  const Vec direct = scenario_gradient(p, 1.5, s, Action::discrete(1));
  CHECK(single.vector == direct);
  CHECK(single.sample_count == 1);
  CHECK(single.estimator_kind == EstimatorKind::PG);

  std::vector<TaggedSample> zeros;
  for (int i = 0; i < 5; ++i) zeros.push_back(make_sample(p, s, Action::discrete(i % 2), 0.0, 4));
  CHECK(norm(pg_estimate(p, zeros).vector) == 0.0);

  CHECK_THROWS_AS(pg_estimate(p, std::span<TaggedSample>{}), std::invalid_argument);
}

TEST_CASE("pg equals lr_average on a current-batch-only reuse set, bit for bit") {
  PolicyParams p = bandit_policy({0.2, -0.4, 0.1});
  const Vec s{1.0};
  std::mt19937_64 rng(5);
  std::vector<TaggedSample> samples;
  for (int i = 0; i < 17; ++i)
    samples.push_back(make_sample(p, s, Action::discrete(static_cast<int>(rng() % 3)),
                                  0.1 * static_cast<double>(i) - 0.5, 9));
  std::vector<TaggedSample> copy = samples;
  const GradientEstimate pg = pg_estimate(p, samples);
  const GradientEstimate lr = lr_average(p, copy);
  REQUIRE(pg.vector.size() == lr.vector.size());
  for (std::size_t i = 0; i < pg.vector.size(); ++i) CHECK(pg.vector[i] == lr.vector[i]);
}

TEST_CASE("lr_individual scales by the ratios") {
  PolicyParams target = bandit_policy({std::log(4.0), 0.0});    // (0.8, 0.2)
  PolicyParams behavior = bandit_policy({std::log(2.0 / 3.0), 0.0});  // (0.4, 0.6)
  const Vec s{1.0};
  // action 0 has ratio exactly 2 under these parameters
  std::vector<TaggedSample> samples;
  for (int i = 0; i < 6; ++i)
    samples.push_back(make_sample(behavior, s, Action::discrete(0), 0.7, 2));
  const GradientEstimate lr = lr_individual(target, samples);
  const Vec base = scenario_gradient(target, 0.7, s, Action::discrete(0));
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(lr.vector[i] == Approx(2.0 * base[i]).epsilon(1e-12));

  std::vector<TaggedSample> mixed{make_sample(behavior, s, Action::discrete(0), 1.0, 2),
                                  make_sample(behavior, s, Action::discrete(0), 1.0, 3)};
  CHECK_THROWS_AS(lr_individual(target, mixed), std::invalid_argument);
}

TEST_CASE("bandit importance-sampling identity by full summation") {
  PolicyParams target = bandit_policy({0.5, -0.2, 0.0});
  PolicyParams behavior = bandit_policy({-0.3, 0.4, 0.1});
  const Vec s{1.0};
  const Vec pt = action_probabilities(target, s);
  const Vec pb = action_probabilities(behavior, s);
  const Vec adv{0.8, -0.3, -0.1};  // any fixed advantage table

  Vec expectation_behavior(target.dim(), 0.0);
  Vec expectation_target(target.dim(), 0.0);
  for (int a = 0; a < 3; ++a) {
    TaggedSample sample = make_sample(behavior, s, Action::discrete(a), adv[a], 1);
    const double f = likelihood_ratio(target, sample);
    axpy(pb[a] * f, scenario_gradient(target, adv[a], s, Action::discrete(a)),
         expectation_behavior);
    axpy(pt[a], scenario_gradient(target, adv[a], s, Action::discrete(a)), expectation_target);
  }
  for (std::size_t i = 0; i < expectation_target.size(); ++i)
    CHECK(expectation_behavior[i] == Approx(expectation_target[i]).margin(1e-14));
}

TEST_CASE("lr_average over groups") {
  PolicyParams target = bandit_policy({0.1, 0.2});
  PolicyParams b1 = bandit_policy({0.0, 0.3});
  PolicyParams b2 = bandit_policy({-0.2, 0.1});
  const Vec s{1.0};

  std::vector<TaggedSample> g1{make_sample(b1, s, Action::discrete(0), 1.0, 1),
                               make_sample(b1, s, Action::discrete(1), -0.5, 1)};
  std::vector<TaggedSample> g2{make_sample(b2, s, Action::discrete(1), 0.25, 2)};

  const GradientEstimate u = lr_individual(target, g1);
  const GradientEstimate v = lr_individual(target, g2);

  std::vector<TaggedSample> all = g1;
  all.insert(all.end(), g2.begin(), g2.end());
  const GradientEstimate avg = lr_average(target, all);
  REQUIRE(avg.source_indices == std::set<int>{1, 2});
  for (std::size_t i = 0; i < avg.vector.size(); ++i)
    CHECK(avg.vector[i] == Approx(0.5 * (u.vector[i] + v.vector[i])).margin(1e-15));

  // a single group is just that group's individual estimator
  const GradientEstimate only = lr_average(target, g1);
  for (std::size_t i = 0; i < only.vector.size(); ++i)
    CHECK(only.vector[i] == Approx(u.vector[i]).margin(1e-15));
}

TEST_CASE("lr_average over identical groups is idempotent") {
  PolicyParams target = bandit_policy({0.4, -0.4});
  PolicyParams behavior = bandit_policy({0.0, 0.0});
  const Vec s{1.0};
  std::vector<TaggedSample> group{make_sample(behavior, s, Action::discrete(0), 1.0, 1),
                                  make_sample(behavior, s, Action::discrete(1), 2.0, 1)};
  const GradientEstimate single = lr_individual(target, group);

  std::vector<TaggedSample> many;
  for (int copy = 0; copy < 4; ++copy)
    for (TaggedSample sample : group) {
      sample.behavior_index = copy + 1;
      many.push_back(sample);
    }
  const GradientEstimate avg = lr_average(target, many);
  for (std::size_t i = 0; i < avg.vector.size(); ++i)
    CHECK(avg.vector[i] == Approx(single.vector[i]).margin(1e-14));
}

TEST_CASE("clr with a huge cap equals lr exactly") {
  PolicyParams target = bandit_policy({0.7, -0.7});
  PolicyParams behavior = bandit_policy({-0.3, 0.3});
  const Vec s{1.0};
  std::vector<TaggedSample> samples;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 9; ++i)
    samples.push_back(
        make_sample(behavior, s, Action::discrete(static_cast<int>(rng() % 2)), 0.5, 1));
  std::vector<TaggedSample> copy = samples;
  const GradientEstimate lr = lr_individual(target, samples);
  const GradientEstimate clr = clr_individual(target, copy, 1e18);
  for (std::size_t i = 0; i < lr.vector.size(); ++i) CHECK(clr.vector[i] == lr.vector[i]);
  CHECK(clr.estimator_kind == EstimatorKind::CLR);
}

TEST_CASE("clr with all ratios above the cap is the capped unweighted mean") {
  PolicyParams target = bandit_policy({3.0, 0.0});
  PolicyParams behavior = bandit_policy({-3.0, 0.0});
  const Vec s{1.0};
  const double cap = 1.5;
  std::vector<TaggedSample> samples;
  for (int i = 0; i < 4; ++i)
    samples.push_back(make_sample(behavior, s, Action::discrete(0), 1.0, 1));
  for (TaggedSample probe : samples) CHECK(likelihood_ratio(target, probe) > cap);

  const GradientEstimate clr = clr_individual(target, samples, cap);
  const Vec base = scenario_gradient(target, 1.0, s, Action::discrete(0));
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(clr.vector[i] == Approx(cap * base[i]).epsilon(1e-12));
}

TEST_CASE("clr with mixed ratios matches a direct per-sample recomputation") {
  PolicyParams target = bandit_policy({0.9, -0.1, 0.2});
  PolicyParams behavior = bandit_policy({-0.5, 0.4, 0.0});
  const Vec s{1.0};
  const double cap = 1.2;
  std::mt19937_64 rng(8);
  std::vector<TaggedSample> samples;
  for (int i = 0; i < 24; ++i)
    samples.push_back(make_sample(behavior, s, Action::discrete(static_cast<int>(rng() % 3)),
                                  0.2 * static_cast<double>(i % 5) - 0.4, 1));

  Vec direct(target.dim(), 0.0);
  for (TaggedSample sample : samples) {
    const double w = std::min(likelihood_ratio(target, sample), cap);
    axpy(w / static_cast<double>(samples.size()),
         scenario_gradient(target, sample.advantage, s, sample.transition.action), direct);
  }
  const GradientEstimate clr = clr_individual(target, samples, cap);
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(clr.vector[i] == Approx(direct[i]).margin(1e-14));
}

TEST_CASE("tabular pg estimates respect the score-norm bound") {
  // tabular softmax scores have norm <= sqrt(2), so |A|<=Ahat bounds the
  // estimate norm by Ahat*sqrt(2)
  std::mt19937_64 rng(21);
  const double a_hat = 2.5;
  for (int round = 0; round < 20; ++round) {
    PolicyParams p = bandit_policy({0.5 * static_cast<double>(rng() % 5),
                                    -0.3 * static_cast<double>(rng() % 4), 0.1});
    std::vector<TaggedSample> samples;
    for (int i = 0; i < 10; ++i) {
      const double adv = a_hat * (2.0 * static_cast<double>(rng() % 1000) / 999.0 - 1.0);
      samples.push_back(
          make_sample(p, Vec{1.0}, Action::discrete(static_cast<int>(rng() % 3)), adv, 1));
    }
    CHECK(norm(pg_estimate(p, samples).vector) <= a_hat * std::sqrt(2.0) + 1e-12);
  }
}

TEST_CASE("per-sample clr weight never exceeds the cap times the plain gradient") {
  PolicyParams target = bandit_policy({1.0, -1.0});
  PolicyParams behavior = bandit_policy({-1.0, 1.0});
  const Vec s{1.0};
  const double cap = 2.0;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const int a = static_cast<int>(rng() % 2);
    const double adv = -1.0 + 0.04 * static_cast<double>(i);
    TaggedSample sample = make_sample(behavior, s, Action::discrete(a), adv, 1);
    const double w = std::min(likelihood_ratio(target, sample), cap);
    const Vec g = scenario_gradient(target, adv, s, Action::discrete(a));
    Vec weighted = g;
    scale(weighted, w);
    CHECK(norm(weighted) <= cap * norm(g) + 1e-15);
  }
}
