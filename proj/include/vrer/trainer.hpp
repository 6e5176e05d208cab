#pragma once

#include <chrono>
#include <functional>
#include <variant>

#include "vrer/env.hpp"
#include "vrer/estimators.hpp"
#include "vrer/oracle.hpp"
#include "vrer/selection.hpp"
#include "vrer/variance.hpp"

namespace vrer {

// Uniform front for the desk environments.
class EnvHandle {
 public:
  explicit EnvHandle(CartPoleEnv env) : env_(std::move(env)) {}
  explicit EnvHandle(ChainMDP env) : env_(std::move(env)) {}

  int observation_dim() const {
    return std::visit([](const auto& e) { return e.observation_dim(); }, env_);
  }
  int num_actions() const {
    return std::visit([](const auto& e) { return e.num_actions(); }, env_);
  }
  Vec reset(std::mt19937_64& rng) {
    return std::visit([&](auto& e) { return e.reset(rng); }, env_);
  }
  StepResult step(const Action& action, std::mt19937_64& rng) {
    if (auto* cp = std::get_if<CartPoleEnv>(&env_)) return cp->step(action);
    return std::get<ChainMDP>(env_).step(action, rng);
  }

 private:
  std::variant<CartPoleEnv, ChainMDP> env_;
};

struct TrainConfig {
  // environment / model
  std::string env = "cartpole";  // "cartpole" or "chain:<file>"
  int max_episode_steps = 500;
  std::string policy = "mlp_softmax";  // "tabular" | "mlp_softmax"
  std::vector<int> hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};

  // outer loop
  int n = 16;        // steps per iteration per environment
  int num_envs = 24;
  int iterations = 100;  // K
  int k_off = 1;         // offline epochs
  int minibatch_size = 0;  // 0: one full-batch update per epoch
  std::size_t n0 = 3;      // downsampled transitions per reused batch

  // optimization
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double lambda = 0.95;
  double entropy_coef = 0.01;
  double value_loss_coef = 0.5;
  double grad_norm_clip = 0.5;
  bool sgd = false;        // plain ascent with eta_k = lr * k^-sgd_decay
  double sgd_decay = 0.0;

  // replay + selection
  std::size_t buffer_capacity = 400;  // B
  double buffer_growth = 0.0;         // xi > 0: dynamic B_k = ceil(k * xi)
  bool vrer = true;                   // false: baseline, reuse = {k}
  SelectionConfig selection;

  // reuse-weighted estimator for the policy update
  EstimatorKind estimator = EstimatorKind::CLR;
  double ratio_cap = 2.0;  // U_f

  std::uint64_t seed = 1;
  bool record_timing = false;       // wall_ms stays 0 unless enabled
  double gradient_norm_check = 0.0;  // > 0: reject estimates with a larger norm
  std::string dump_buffer;           // path: write the final buffer snapshot
};

// One metrics CSV row.
struct IterationMetrics {
  int k = 0;
  long steps = 0;
  double mean_return = 0.0;
  double reuse_ratio = 0.0;
  double pg_trace_var = 0.0;
  double lr_trace_var = 0.0;
  double zeta_hat = 0.0;
  double mean_kl_min = 0.0;
  double mean_kl_max = 0.0;
  long wall_ms = 0;
};

struct EpisodeRecord {
  long step = 0;  // global env step at which the episode finished
  double episode_return = 0.0;
};

struct TrainResult {
  std::vector<IterationMetrics> metrics;
  std::vector<EpisodeRecord> episodes;
  std::vector<DecisionRecord> decisions;
  PolicyParams policy;
  CriticParams critic;
  std::uint64_t capped_ratios = 0;
  Vec probe;  // running average of ||grad J||^2 when a probe hook is set
};

struct RolloutStats {
  std::vector<EpisodeRecord> episodes;
};

namespace detail {

struct EnvWorker {
  EnvHandle env;
  std::mt19937_64 rng;
  Vec obs;
  double episode_return = 0.0;
};

// n steps from every environment, ordered env-major so each environment's
// segment stays in collection order.
inline IterationBatch collect_rollout(std::vector<EnvWorker>& workers, const PolicyParams& policy,
                                      const CriticParams& critic, int n, int iteration,
                                      double gamma, double lambda, long steps_before,
                                      RolloutStats& stats) {
  IterationBatch batch;
  batch.iteration_index = iteration;
  batch.snapshot = make_snapshot(policy, iteration);
  batch.transitions.reserve(static_cast<std::size_t>(n) * workers.size());
  batch.advantages.reserve(batch.transitions.capacity());
  batch.return_targets.reserve(batch.transitions.capacity());

  for (std::size_t e = 0; e < workers.size(); ++e) {
    EnvWorker& w = workers[e];
    Vec rewards(n), values(n + 1);
    std::vector<std::uint8_t> terminals(n);
    const std::size_t base = batch.transitions.size();
    for (int t = 0; t < n; ++t) {
      Transition tr;
      tr.state = w.obs;
      tr.action = sample_action(policy, w.obs, w.rng);
      tr.behavior_log_prob = log_prob(policy, w.obs, tr.action);
      tr.value_estimate = critic_value(critic, w.obs);
      StepResult res = w.env.step(tr.action, w.rng);
      tr.reward = res.reward;
      tr.next_state = res.next_state;
      tr.terminal = res.terminal;
      w.episode_return += res.reward;
      rewards[t] = res.reward;
      values[t] = tr.value_estimate;
      terminals[t] = res.terminal ? 1 : 0;
      if (res.terminal) {
        const long global = steps_before + static_cast<long>(e) * n + t + 1;
        stats.episodes.push_back({global, w.episode_return});
        w.episode_return = 0.0;
        w.obs = w.env.reset(w.rng);
      } else {
        w.obs = res.next_state;
      }
      batch.transitions.push_back(std::move(tr));
    }
    values[n] = critic_value(critic, w.obs);
    Vec adv = gae_advantages(rewards, values, terminals, gamma, lambda);
    for (int t = 0; t < n; ++t) {
      batch.advantages.push_back(adv[t]);
      batch.return_targets.push_back(adv[t] + values[t]);  // lambda-return target
    }
  }
  return batch;
}

}  // namespace detail

// Bias-corrected Adam ascent step: params += lr * mhat / (sqrt(vhat) + eps).
inline void adam_step(Vec& params, AdamMoments& moments, const Vec& gradient, double lr,
                      double eps = 1e-8) {
  check(params.size() == gradient.size(), "parameter/gradient shape mismatch");
  adam_update(moments, gradient);
  const double c1 = 1.0 - std::pow(moments.beta1, static_cast<double>(moments.step));
  const double c2 = 1.0 - std::pow(moments.beta2, static_cast<double>(moments.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double mhat = moments.m_raw[i] / c1;
    const double vhat = moments.v_raw[i] / c2;
    params[i] += lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// K_off epochs of grouped LR/CLR minibatch ascent with an entropy bonus,
// plus critic regression to the frozen return targets.
inline void offline_optimize(PolicyParams& policy, CriticParams& critic,
                             AdamMoments& policy_adam, AdamMoments& critic_adam,
                             std::vector<TaggedSample>& samples, const Vec& return_targets,
                             const TrainConfig& cfg, int iteration, std::mt19937_64& shuffle_rng,
                             RatioStats* ratio_stats = nullptr) {
  if (samples.empty() || cfg.k_off <= 0) return;
  check(return_targets.size() == samples.size(), "return targets misaligned with samples");
  const std::size_t total = samples.size();
  const std::size_t mb_size =
      cfg.minibatch_size > 0 ? std::min<std::size_t>(cfg.minibatch_size, total) : total;
  std::vector<std::size_t> order(total);
  const double eta_k =
      cfg.sgd ? cfg.learning_rate * std::pow(static_cast<double>(iteration), -cfg.sgd_decay)
              : cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.k_off; ++epoch) {
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    if (mb_size < total) std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < total; start += mb_size) {
      const std::size_t stop = std::min(start + mb_size, total);
      std::vector<TaggedSample> mb;
      Vec mb_targets;
      mb.reserve(stop - start);
      for (std::size_t j = start; j < stop; ++j) {
        mb.push_back(samples[order[j]]);
        mb.back().target_log_prob = std::numeric_limits<double>::quiet_NaN();
        mb_targets.push_back(return_targets[order[j]]);
      }

      GradientEstimate est =
          cfg.estimator == EstimatorKind::CLR
              ? clr_average(policy, mb, cfg.ratio_cap, ratio_stats)
              : lr_average(policy, mb, ratio_stats);
      if (cfg.gradient_norm_check > 0.0)
        check(norm(est.vector) <= cfg.gradient_norm_check,
              "gradient estimate exceeds the configured norm bound");
      Vec pg = std::move(est.vector);
      if (cfg.entropy_coef != 0.0) {
        const double alpha = cfg.entropy_coef / static_cast<double>(mb.size());
        for (const TaggedSample& s : mb)
          accumulate_entropy_gradient(policy, s.transition.state, alpha, pg);
      }
      clip_global_norm(pg, cfg.grad_norm_clip);
      if (cfg.sgd) {
        axpy(eta_k, pg, policy.weights);
      } else {
        adam_step(policy.weights, policy_adam, pg, cfg.learning_rate);
      }

      Vec cg(critic.dim(), 0.0);
      const double inv_mb = 1.0 / static_cast<double>(mb.size());
      for (std::size_t j = 0; j < mb.size(); ++j) {
        const Vec& s = mb[j].transition.state;
        const double err = critic_value(critic, s) - mb_targets[j];
        // ascent direction of -value_loss_coef * 0.5 * MSE
        accumulate_critic_gradient(critic, s, -cfg.value_loss_coef * err * inv_mb, cg);
      }
      clip_global_norm(cg, cfg.grad_norm_clip);
      if (cfg.sgd) {
        axpy(eta_k, cg, critic.weights);
      } else {
        adam_step(critic.weights, critic_adam, cg, cfg.learning_rate);
      }
    }
  }
}

using IterationHook = std::function<void(int iteration, const PolicyParams&)>;

inline EnvHandle make_env_from_spec(const std::string& spec, int max_episode_steps) {
  if (spec == "cartpole") return EnvHandle(CartPoleEnv(max_episode_steps));
  if (spec.rfind("chain:", 0) == 0) return EnvHandle(ChainMDP::from_file(spec.substr(6)));
  throw std::invalid_argument("unknown env spec: " + spec);
}

inline TrainResult train(const TrainConfig& cfg, const std::function<EnvHandle()>& make_env,
                         const IterationHook& hook = {}) {
  check(cfg.n >= 1 && cfg.num_envs >= 1 && cfg.iterations >= 1, "loop sizes must be positive");
  check(cfg.n0 >= 1, "n0 must be positive");

  std::vector<detail::EnvWorker> workers;
  workers.reserve(cfg.num_envs);
  for (int e = 0; e < cfg.num_envs; ++e) {
    detail::EnvWorker w{make_env(), std::mt19937_64(mix_seed(cfg.seed, 0xE17u, e)), {}, 0.0};
    w.obs = w.env.reset(w.rng);
    workers.push_back(std::move(w));
  }
  const int obs_dim = workers.front().env.observation_dim();
  const int num_actions = workers.front().env.num_actions();

  TrainResult out;
  std::mt19937_64 init_rng(mix_seed(cfg.seed, 0x171u));
  if (cfg.policy == "tabular") {
    out.policy = PolicyParams::tabular(obs_dim, num_actions);
  } else if (cfg.policy == "mlp_softmax") {
    std::vector<int> layers{obs_dim};
    layers.insert(layers.end(), cfg.hidden.begin(), cfg.hidden.end());
    layers.push_back(num_actions);
    out.policy = PolicyParams::mlp_discrete(layers);
  } else {
    throw std::invalid_argument("unknown policy spec: " + cfg.policy);
  }
  init_policy(out.policy, init_rng);
  {
    std::vector<int> clayers{obs_dim};
    if (cfg.policy != "tabular")
      clayers.insert(clayers.end(), cfg.critic_hidden.begin(), cfg.critic_hidden.end());
    clayers.push_back(1);
    out.critic = CriticParams::make(clayers);
    init_critic(out.critic, init_rng);
  }

  AdamMoments policy_adam = AdamMoments::zeros(out.policy.dim());
  AdamMoments critic_adam = AdamMoments::zeros(out.critic.dim());
  ReplayBuffer buffer(cfg.buffer_capacity);
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5FFu));
  RatioStats ratio_stats;
  double last_mean_return = 0.0;

  for (int k = 1; k <= cfg.iterations; ++k) try {
    const auto t0 = std::chrono::steady_clock::now();
    const long steps_before = static_cast<long>(k - 1) * cfg.n * cfg.num_envs;

    RolloutStats roll;
    IterationBatch batch = detail::collect_rollout(workers, out.policy, out.critic, cfg.n, k,
                                                   cfg.gamma, cfg.lambda, steps_before, roll);
    if (hook) hook(k, out.policy);
    if (cfg.buffer_growth > 0.0)
      buffer.set_capacity(std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(k * cfg.buffer_growth))));
    buffer.push(std::move(batch));
    const IterationBatch& current = buffer.newest();

    const double zeta_hat = policy_adam.step >= 1 ? relative_variance(policy_adam) : 0.0;
    ReuseSet reuse;
    std::vector<DecisionRecord> decisions;
    if (cfg.vrer) {
      reuse = build_reuse_set(buffer, out.policy, cfg.selection, zeta_hat, &decisions,
                              &ratio_stats);
    } else {
      reuse.member_indices.insert(k);
    }
    for (const auto& d : decisions) out.decisions.push_back(d);

    // Training set: the current batch in full plus n0 downsampled
    // transitions from every other selected batch.
    std::vector<TaggedSample> samples;
    Vec return_targets;
    samples.reserve(current.size() + cfg.n0 * reuse.size());
    for (std::size_t j = 0; j < current.size(); ++j) {
      samples.push_back({current.transitions[j], k, current.advantages[j],
                         std::numeric_limits<double>::quiet_NaN()});
      return_targets.push_back(current.return_targets[j]);
    }
    for (int i : reuse.member_indices) {
      if (i == k) continue;
      const IterationBatch* src = buffer.find(i);
      for (std::size_t pos : downsample_indices(src->size(), cfg.n0, mix_seed(cfg.seed, k, i))) {
        samples.push_back({src->transitions[pos], i, src->advantages[pos],
                           std::numeric_limits<double>::quiet_NaN()});
        return_targets.push_back(src->return_targets[pos]);
      }
    }

    IterationMetrics m;
    m.k = k;
    m.steps = steps_before + static_cast<long>(cfg.n) * cfg.num_envs;
    m.reuse_ratio = static_cast<double>(reuse.size()) / static_cast<double>(buffer.size());
    m.zeta_hat = zeta_hat;
    {
      const auto pg_grads = plain_sample_gradients(out.policy, current);
      m.pg_trace_var =
          mbb_trace_variance(pg_grads, default_block_length(pg_grads.size())).trace_variance;
      std::vector<Vec> weighted;
      weighted.reserve(samples.size());
      std::optional<double> cap;
      if (cfg.estimator == EstimatorKind::CLR) cap = cfg.ratio_cap;
      for (TaggedSample s : samples) {
        double w = likelihood_ratio(out.policy, s, &ratio_stats);
        if (cap) w = clip_ratio(w, *cap);
        Vec g = score(out.policy, s.transition.state, s.transition.action);
        scale(g, w * s.advantage);
        weighted.push_back(std::move(g));
      }
      m.lr_trace_var =
          mbb_trace_variance(weighted, default_block_length(weighted.size())).trace_variance;
    }
    if (cfg.vrer && cfg.selection.rule == SelectionRule::kl_approx) {
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (const auto& d : decisions) {
        if (d.candidate == k) continue;
        lo = std::min(lo, d.statistic);
        hi = std::max(hi, d.statistic);
      }
      m.mean_kl_min = std::isfinite(lo) ? lo : 0.0;
      m.mean_kl_max = hi;
    }
    if (!roll.episodes.empty()) {
      double sum = 0.0;
      for (const auto& ep : roll.episodes) sum += ep.episode_return;
      last_mean_return = sum / static_cast<double>(roll.episodes.size());
    }
    m.mean_return = last_mean_return;
    for (const auto& ep : roll.episodes) out.episodes.push_back(ep);

    offline_optimize(out.policy, out.critic, policy_adam, critic_adam, samples, return_targets,
                     cfg, k, shuffle_rng, &ratio_stats);

    if (cfg.record_timing)
      m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    out.metrics.push_back(m);
  } catch (const std::exception& ex) {
    throw std::runtime_error("iteration " + std::to_string(k) + ": " + ex.what());
  }
  if (!cfg.dump_buffer.empty()) {
    std::ofstream os(cfg.dump_buffer);
    check(os.good(), "cannot open " + cfg.dump_buffer);
    write_buffer_snapshot(buffer, os);
  }
  out.capped_ratios = ratio_stats.capped;
  return out;
}

inline TrainResult train(const TrainConfig& cfg, const IterationHook& hook = {}) {
  return train(
      cfg, [&] { return make_env_from_spec(cfg.env, cfg.max_episode_steps); }, hook);
}

// Runs the loop on a tabular MDP and reports the running average of the
// exact squared gradient norm, evaluated by the oracle at every iterate.
inline Vec tabular_convergence_probe(const ChainMDP& mdp, TrainConfig cfg) {
  cfg.policy = "tabular";
  Vec running;
  double acc = 0.0;
  TrainResult res = train(
      cfg, [&] { return EnvHandle(mdp); },
      [&](int k, const PolicyParams& p) {
        const Vec g = exact_policy_gradient(mdp, p);
        acc += norm2(g);
        running.push_back(acc / static_cast<double>(k));
      });
  return running;
}

}  // namespace vrer
