#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "vrer/math.hpp"

namespace vrer {

enum class PolicyKind : std::uint8_t { tabular_softmax = 0, mlp_softmax = 1, mlp_gaussian = 2 };

// Environment action: either a discrete index or a real vector.
struct Action {
  int index = -1;
  Vec continuous;

  static Action discrete(int a) {
    Action x;
    x.index = a;
    return x;
  }
  static Action real(Vec v) {
    Action x;
    x.continuous = std::move(v);
    return x;
  }
  bool is_discrete() const { return index >= 0; }
};

namespace detail {

// Weight count of a fully-connected net with the given layer widths.
// Tabular nets are a bias-free logit table (one row per state).
inline std::size_t weight_count(PolicyKind kind, const std::vector<int>& layers) {
  if (kind == PolicyKind::tabular_softmax)
    return static_cast<std::size_t>(layers.front()) * static_cast<std::size_t>(layers.back());
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l)
    n += static_cast<std::size_t>(layers[l + 1]) * (layers[l] + 1);
  return n;
}

inline std::size_t mlp_weight_count(const std::vector<int>& layers) {
  return weight_count(PolicyKind::mlp_softmax, layers);
}

// Forward pass keeping pre-activation sums and activations for backprop.
// Hidden layers are tanh, the output layer is linear.
struct MlpCache {
  std::vector<Vec> act;  // act[0] = input, act.back() = output
};

inline Vec mlp_forward(const std::vector<int>& layers, const Vec& w, const Vec& x,
                       MlpCache* cache = nullptr) {
  check(static_cast<int>(x.size()) == layers.front(), "mlp input dimension mismatch");
  Vec cur = x;
  if (cache) {
    cache->act.clear();
    cache->act.push_back(cur);
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const int in = layers[l], out = layers[l + 1];
    Vec next(out);
    for (int o = 0; o < out; ++o) {
      double s = w[off + static_cast<std::size_t>(out) * in + o];  // bias
      const double* row = &w[off + static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) s += row[i] * cur[i];
      next[o] = s;
    }
    off += static_cast<std::size_t>(out) * (in + 1);
    const bool last = (l + 2 == layers.size());
    if (!last)
      for (double& v : next) v = std::tanh(v);
    cur = std::move(next);
    if (cache) cache->act.push_back(cur);
  }
  return cur;
}

// Backprop of (d objective / d output) through the cached forward pass;
// accumulates alpha * (d objective / d weights) into grad.
inline void mlp_backward(const std::vector<int>& layers, const Vec& w, const MlpCache& cache,
                         Vec delta_out, double alpha, Vec& grad) {
  std::vector<std::size_t> offs(layers.size() - 1);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    offs[l] = off;
    off += static_cast<std::size_t>(layers[l + 1]) * (layers[l] + 1);
  }
  Vec delta = std::move(delta_out);
  for (std::size_t l = layers.size() - 1; l-- > 0;) {
    const int in = layers[l], out = layers[l + 1];
    const Vec& a_in = cache.act[l];
    for (int o = 0; o < out; ++o) {
      const double d = alpha * delta[o];
      double* grow = &grad[offs[l] + static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) grow[i] += d * a_in[i];
      grad[offs[l] + static_cast<std::size_t>(out) * in + o] += d;
    }
    if (l == 0) break;
    Vec prev(in, 0.0);
    for (int o = 0; o < out; ++o) {
      const double d = delta[o];
      const double* row = &w[offs[l] + static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) prev[i] += d * row[i];
    }
    // act[l] holds tanh outputs of hidden layer l; tanh' = 1 - tanh^2.
    const Vec& h = cache.act[l];
    for (int i = 0; i < in; ++i) prev[i] *= 1.0 - h[i] * h[i];
    delta = std::move(prev);
  }
}

inline void softmax_inplace(Vec& z) {
  double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
}

inline int one_hot_index(const Vec& state) {
  int best = 0;
  for (std::size_t i = 1; i < state.size(); ++i)
    if (state[i] > state[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace detail

// Parametric policy: tabular softmax, MLP softmax head, or MLP Gaussian
// head with a state-independent standard deviation.
struct PolicyParams {
  PolicyKind kind = PolicyKind::tabular_softmax;
  std::vector<int> layers;  // {input, hidden..., output}
  double fixed_std = 0.5;   // mlp_gaussian only; excluded from weights
  Vec weights;

  static PolicyParams tabular(int num_states, int num_actions) {
    PolicyParams p;
    p.kind = PolicyKind::tabular_softmax;
    p.layers = {num_states, num_actions};
    p.weights.assign(static_cast<std::size_t>(num_states) * num_actions, 0.0);
    return p;
  }
  static PolicyParams mlp_discrete(std::vector<int> layers) {
    PolicyParams p;
    p.kind = PolicyKind::mlp_softmax;
    p.layers = std::move(layers);
    p.weights.assign(detail::weight_count(p.kind, p.layers), 0.0);
    return p;
  }
  static PolicyParams mlp_continuous(std::vector<int> layers, double std_dev) {
    check(std_dev > 0.0, "fixed_std must be positive");
    PolicyParams p;
    p.kind = PolicyKind::mlp_gaussian;
    p.layers = std::move(layers);
    p.fixed_std = std_dev;
    p.weights.assign(detail::weight_count(p.kind, p.layers), 0.0);
    return p;
  }

  int action_dim() const { return layers.back(); }
  std::size_t dim() const { return weights.size(); }
};

// Frozen copy of the policy that generated an iteration's samples.
struct PolicySnapshot {
  PolicyParams params;
  int iteration_index = 0;
};

inline std::shared_ptr<const PolicySnapshot> make_snapshot(const PolicyParams& p, int iteration) {
  return std::make_shared<const PolicySnapshot>(PolicySnapshot{p, iteration});
}

// Action probabilities for discrete policies / mean vector for Gaussian ones.
inline Vec policy_head(const PolicyParams& p, const Vec& state, detail::MlpCache* cache = nullptr) {
  if (p.kind == PolicyKind::tabular_softmax) {
    const int s = detail::one_hot_index(state);
    const int na = p.layers.back();
    Vec z(p.weights.begin() + static_cast<std::size_t>(s) * na,
          p.weights.begin() + static_cast<std::size_t>(s + 1) * na);
    return z;
  }
  return detail::mlp_forward(p.layers, p.weights, state, cache);
}

inline Vec action_probabilities(const PolicyParams& p, const Vec& state) {
  check(p.kind != PolicyKind::mlp_gaussian, "discrete policy required");
  Vec z = policy_head(p, state);
  detail::softmax_inplace(z);
  return z;
}

inline double log_prob(const PolicyParams& p, const Vec& state, const Action& action) {
  if (p.kind == PolicyKind::mlp_gaussian) {
    check(!action.is_discrete(), "continuous action required");
    const Vec mu = policy_head(p, state);
    check(action.continuous.size() == mu.size(), "action dimension mismatch");
    const double s2 = p.fixed_std * p.fixed_std;
    double q = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double d = action.continuous[i] - mu[i];
      q += d * d;
    }
    const double m = static_cast<double>(mu.size());
    return -0.5 * q / s2 - m * std::log(p.fixed_std) - 0.5 * m * std::log(2.0 * M_PI);
  }
  check(action.is_discrete() && action.index < p.layers.back(), "invalid action index");
  Vec z = policy_head(p, state);
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return z[action.index] - m - std::log(s);
}

// Gradient of log_prob with respect to the flat weight vector.
inline Vec score(const PolicyParams& p, const Vec& state, const Action& action) {
  Vec g(p.dim(), 0.0);
  if (p.kind == PolicyKind::tabular_softmax) {
    check(action.is_discrete() && action.index < p.layers.back(), "invalid action index");
    const int s = detail::one_hot_index(state);
    const int na = p.layers.back();
    Vec pi = action_probabilities(p, state);
    for (int a = 0; a < na; ++a) g[static_cast<std::size_t>(s) * na + a] = -pi[a];
    g[static_cast<std::size_t>(s) * na + action.index] += 1.0;
    return g;
  }
  detail::MlpCache cache;
  Vec head = detail::mlp_forward(p.layers, p.weights, state, &cache);
  Vec delta;
  if (p.kind == PolicyKind::mlp_softmax) {
    check(action.is_discrete() && action.index < p.layers.back(), "invalid action index");
    detail::softmax_inplace(head);
    delta.assign(head.size(), 0.0);
    for (std::size_t a = 0; a < head.size(); ++a) delta[a] = -head[a];
    delta[action.index] += 1.0;
  } else {
    check(action.continuous.size() == head.size(), "action dimension mismatch");
    const double s2 = p.fixed_std * p.fixed_std;
    delta.resize(head.size());
    for (std::size_t i = 0; i < head.size(); ++i)
      delta[i] = (action.continuous[i] - head[i]) / s2;
  }
  detail::mlp_backward(p.layers, p.weights, cache, std::move(delta), 1.0, g);
  return g;
}

inline Action sample_action(const PolicyParams& p, const Vec& state, std::mt19937_64& rng) {
  if (p.kind == PolicyKind::mlp_gaussian) {
    Vec mu = policy_head(p, state);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : mu) v += p.fixed_std * nd(rng);
    return Action::real(std::move(mu));
  }
  Vec pi = action_probabilities(p, state);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  double u = ud(rng);
  double acc = 0.0;
  for (std::size_t a = 0; a < pi.size(); ++a) {
    acc += pi[a];
    if (u <= acc) return Action::discrete(static_cast<int>(a));
  }
  return Action::discrete(static_cast<int>(pi.size()) - 1);
}

inline Action sample_action(const PolicyParams& p, const Vec& state, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_action(p, state, rng);
}

inline double entropy(const PolicyParams& p, const Vec& state) {
  if (p.kind == PolicyKind::mlp_gaussian) {
    const double m = static_cast<double>(p.layers.back());
    return 0.5 * m * std::log(2.0 * M_PI * std::exp(1.0) * p.fixed_std * p.fixed_std);
  }
  Vec pi = action_probabilities(p, state);
  double h = 0.0;
  for (double q : pi)
    if (q > 0.0) h -= q * std::log(q);
  return h;
}

// Accumulates alpha * d entropy / d weights into grad (discrete heads only;
// the Gaussian head has constant entropy under a fixed std).
inline void accumulate_entropy_gradient(const PolicyParams& p, const Vec& state, double alpha,
                                        Vec& grad) {
  if (p.kind == PolicyKind::mlp_gaussian) return;
  if (p.kind == PolicyKind::tabular_softmax) {
    const int s = detail::one_hot_index(state);
    const int na = p.layers.back();
    Vec pi = action_probabilities(p, state);
    double h = 0.0;
    for (double q : pi) h -= q * std::log(q);
    for (int a = 0; a < na; ++a)
      grad[static_cast<std::size_t>(s) * na + a] += alpha * (-pi[a] * (std::log(pi[a]) + h));
    return;
  }
  detail::MlpCache cache;
  Vec pi = detail::mlp_forward(p.layers, p.weights, state, &cache);
  detail::softmax_inplace(pi);
  double h = 0.0;
  for (double q : pi) h -= q * std::log(q);
  Vec delta(pi.size());
  for (std::size_t a = 0; a < pi.size(); ++a) delta[a] = -pi[a] * (std::log(pi[a]) + h);
  detail::mlp_backward(p.layers, p.weights, cache, std::move(delta), alpha, grad);
}

// Analytic per-state KL(target || behavior), averaged over the given states.
// Returns +inf when the behavior policy has vanishing mass on an action the
// target policy still uses.
inline double mean_kl(const PolicyParams& target, const PolicyParams& behavior,
                      const std::vector<Vec>& states) {
  check(!states.empty(), "mean_kl needs at least one state");
  double acc = 0.0;
  for (const Vec& s : states) {
    if (target.kind == PolicyKind::mlp_gaussian) {
      const Vec mu_t = policy_head(target, s);
      const Vec mu_b = policy_head(behavior, s);
      const double st = target.fixed_std, sb = behavior.fixed_std;
      const double m = static_cast<double>(mu_t.size());
      double q = 0.0;
      for (std::size_t i = 0; i < mu_t.size(); ++i) {
        const double d = mu_t[i] - mu_b[i];
        q += d * d;
      }
      acc += m * std::log(sb / st) + (m * st * st + q) / (2.0 * sb * sb) - 0.5 * m;
    } else {
      const Vec pt = action_probabilities(target, s);
      const Vec pb = action_probabilities(behavior, s);
      double kl = 0.0;
      for (std::size_t a = 0; a < pt.size(); ++a) {
        if (pt[a] <= 0.0) continue;
        if (pb[a] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += pt[a] * (std::log(pt[a]) - std::log(pb[a]));
      }
      acc += kl;
    }
  }
  return acc / static_cast<double>(states.size());
}

// State-value critic: fully-connected net with a scalar output.  An empty
// hidden list on a one-hot input degenerates to a value table.
struct CriticParams {
  std::vector<int> layers;  // {input, hidden..., 1}
  Vec weights;

  static CriticParams make(std::vector<int> layers) {
    check(layers.back() == 1, "critic output must be scalar");
    CriticParams c;
    c.layers = std::move(layers);
    c.weights.assign(detail::mlp_weight_count(c.layers), 0.0);
    return c;
  }
  std::size_t dim() const { return weights.size(); }
};

inline double critic_value(const CriticParams& c, const Vec& state) {
  return detail::mlp_forward(c.layers, c.weights, state)[0];
}

// Accumulates alpha * dV(state)/dw into grad.
inline void accumulate_critic_gradient(const CriticParams& c, const Vec& state, double alpha,
                                       Vec& grad) {
  detail::MlpCache cache;
  detail::mlp_forward(c.layers, c.weights, state, &cache);
  detail::mlp_backward(c.layers, c.weights, cache, Vec{1.0}, alpha, grad);
}

namespace detail {

// Gram-Schmidt orthogonalization of gaussian rows; rows beyond the input
// dimension are only normalized (a full basis no longer exists).
inline void orthogonal_rows(std::vector<Vec>& rows, double gain) {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t q = 0; q < std::min(r, rows[r].size()); ++q) {
      const double proj = dot(rows[r], rows[q]);
      axpy(-proj, rows[q], rows[r]);
    }
    const double n = norm(rows[r]);
    if (n > 1e-12) scale(rows[r], 1.0 / n);
  }
  for (Vec& row : rows) scale(row, gain);
}

inline void init_layer(Vec& w, std::size_t off, int in, int out, double gain,
                       std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Vec> rows(out, Vec(in));
  for (auto& row : rows)
    for (double& v : row) v = nd(rng);
  orthogonal_rows(rows, gain);
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i) w[off + static_cast<std::size_t>(o) * in + i] = rows[o][i];
  for (int o = 0; o < out; ++o) w[off + static_cast<std::size_t>(out) * in + o] = 0.0;
}

inline void init_mlp(const std::vector<int>& layers, Vec& w, double head_gain,
                     std::mt19937_64& rng) {
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const bool last = (l + 2 == layers.size());
    init_layer(w, off, layers[l], layers[l + 1], last ? head_gain : std::sqrt(2.0), rng);
    off += static_cast<std::size_t>(layers[l + 1]) * (layers[l] + 1);
  }
}

}  // namespace detail

inline void init_policy(PolicyParams& p, std::mt19937_64& rng) {
  if (p.kind == PolicyKind::tabular_softmax) {
    std::fill(p.weights.begin(), p.weights.end(), 0.0);
    return;
  }
  detail::init_mlp(p.layers, p.weights, 0.01, rng);
}

inline void init_critic(CriticParams& c, std::mt19937_64& rng) {
  detail::init_mlp(c.layers, c.weights, 1.0, rng);
}

// ---- parameter serialization -------------------------------------------
//
// Flat binary format: magic "VRPM", version, kind byte (policies) or 0xFF
// (critic), layer count + widths, fixed_std, weight count, raw doubles.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

inline void save_flat(std::ostream& os, std::uint8_t kind, const std::vector<int>& layers,
                      double fixed_std, const Vec& w) {
  os.write("VRPM", 4);
  write_u32(os, 1u);
  os.put(static_cast<char>(kind));
  write_u32(os, static_cast<std::uint32_t>(layers.size()));
  for (int l : layers) write_u32(os, static_cast<std::uint32_t>(l));
  write_f64(os, fixed_std);
  write_u32(os, static_cast<std::uint32_t>(w.size()));
  for (double v : w) write_f64(os, v);
}

inline void load_flat(std::istream& is, std::uint8_t& kind, std::vector<int>& layers,
                      double& fixed_std, Vec& w) {
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, "VRPM", 4) == 0, "bad parameter file magic");
  check(read_u32(is) == 1u, "unsupported parameter file version");
  kind = static_cast<std::uint8_t>(is.get());
  layers.resize(read_u32(is));
  for (int& l : layers) l = static_cast<int>(read_u32(is));
  fixed_std = read_f64(is);
  w.resize(read_u32(is));
  for (double& v : w) v = read_f64(is);
  check(is.good(), "truncated parameter file");
}

}  // namespace detail

inline void save_policy(const PolicyParams& p, std::ostream& os) {
  detail::save_flat(os, static_cast<std::uint8_t>(p.kind), p.layers, p.fixed_std, p.weights);
}

inline void save_policy(const PolicyParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "cannot open " + path);
  save_policy(p, os);
}

inline PolicyParams load_policy(std::istream& is) {
  PolicyParams p;
  std::uint8_t kind = 0;
  detail::load_flat(is, kind, p.layers, p.fixed_std, p.weights);
  check(kind <= 2, "not a policy parameter file");
  p.kind = static_cast<PolicyKind>(kind);
  check(p.weights.size() == detail::weight_count(p.kind, p.layers),
        "weight count does not match architecture");
  return p;
}

inline PolicyParams load_policy(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "cannot open " + path);
  return load_policy(is);
}

inline void save_critic(const CriticParams& c, std::ostream& os) {
  detail::save_flat(os, 0xFF, c.layers, 0.0, c.weights);
}

inline void save_critic(const CriticParams& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "cannot open " + path);
  save_critic(c, os);
}

inline CriticParams load_critic(std::istream& is) {
  CriticParams c;
  std::uint8_t kind = 0;
  double unused = 0.0;
  detail::load_flat(is, kind, c.layers, unused, c.weights);
  check(kind == 0xFF, "not a critic parameter file");
  check(c.weights.size() == detail::mlp_weight_count(c.layers),
        "weight count does not match architecture");
  return c;
}

inline CriticParams load_critic(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "cannot open " + path);
  return load_critic(is);
}

}  // namespace vrer
