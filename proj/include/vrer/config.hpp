#pragma once

#include <iostream>
#include <sstream>

#include "vrer/trainer.hpp"

namespace vrer {

enum class SweepAxis { none, c, buffer };

struct ExperimentSpec {
  TrainConfig train;
  SweepAxis axis = SweepAxis::none;
  std::vector<double> sweep_values;
  int macro_replications = 1;
  std::string out_dir = "runs";
};

namespace detail {

inline std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

inline std::vector<double> parse_double_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline void apply_key(ExperimentSpec& spec, const std::string& key, const std::string& value) {
  TrainConfig& t = spec.train;
  if (key == "env") t.env = value;
  else if (key == "max_episode_steps") t.max_episode_steps = std::stoi(value);
  else if (key == "policy") t.policy = value;
  else if (key == "hidden") t.hidden = parse_int_list(value);
  else if (key == "critic_hidden") t.critic_hidden = parse_int_list(value);
  else if (key == "n") t.n = std::stoi(value);
  else if (key == "num_envs") t.num_envs = std::stoi(value);
  else if (key == "iterations") t.iterations = std::stoi(value);
  else if (key == "k_off") t.k_off = std::stoi(value);
  else if (key == "minibatch_size") t.minibatch_size = std::stoi(value);
  else if (key == "n0") t.n0 = static_cast<std::size_t>(std::stoul(value));
  else if (key == "learning_rate") t.learning_rate = std::stod(value);
  else if (key == "gamma") t.gamma = std::stod(value);
  else if (key == "lambda") t.lambda = std::stod(value);
  else if (key == "entropy_coef") t.entropy_coef = std::stod(value);
  else if (key == "value_loss_coef") t.value_loss_coef = std::stod(value);
  else if (key == "grad_norm_clip") t.grad_norm_clip = std::stod(value);
  else if (key == "optimizer") {
    if (value == "adam") t.sgd = false;
    else if (value == "sgd") t.sgd = true;
    else throw std::invalid_argument("optimizer must be adam or sgd");
  } else if (key == "sgd_decay") t.sgd_decay = std::stod(value);
  else if (key == "buffer") t.buffer_capacity = std::stoul(value);
  else if (key == "buffer_growth") t.buffer_growth = std::stod(value);
  else if (key == "vrer") t.vrer = parse_bool(value, key);
  else if (key == "c") {
    const double c = std::stod(value);
    if (c < 1.0) throw std::invalid_argument("selection constant c must satisfy c > 1");
    if (c == 1.0)
      std::cerr << "warning: c = 1 selects only the current batch\n";
    t.selection.c = c;
  } else if (key == "rule") {
    if (value == "bootstrap") t.selection.rule = SelectionRule::bootstrap;
    else if (value == "kl_approx") t.selection.rule = SelectionRule::kl_approx;
    else throw std::invalid_argument("rule must be bootstrap or kl_approx");
  } else if (key == "selection_clip") {
    t.selection.clip_cap = std::stod(value);
  } else if (key == "block_length") t.selection.block_length = std::stoul(value);
  else if (key == "kl_state_sample") t.selection.kl_state_sample = std::stoul(value);
  else if (key == "estimator") {
    if (value == "lr") t.estimator = EstimatorKind::LR;
    else if (value == "clr") t.estimator = EstimatorKind::CLR;
    else throw std::invalid_argument("estimator must be lr or clr");
  } else if (key == "ratio_cap") t.ratio_cap = std::stod(value);
  else if (key == "seed") t.seed = std::stoull(value);
  else if (key == "record_timing") t.record_timing = parse_bool(value, key);
  else if (key == "gradient_norm_check") t.gradient_norm_check = std::stod(value);
  else if (key == "dump_buffer") t.dump_buffer = value;
  else if (key == "sweep") {
    if (value == "none") spec.axis = SweepAxis::none;
    else if (value == "c") spec.axis = SweepAxis::c;
    else if (value == "buffer") spec.axis = SweepAxis::buffer;
    else throw std::invalid_argument("sweep must be none, c, or buffer");
  } else if (key == "sweep_values") spec.sweep_values = parse_double_list(value);
  else if (key == "reps") {
    spec.macro_replications = std::stoi(value);
    if (spec.macro_replications < 1)
      throw std::invalid_argument("reps must be at least 1");
  } else if (key == "out") spec.out_dir = value;
  else throw std::invalid_argument("unknown key '" + key + "'");
}

inline std::pair<std::string, std::string> split_kv(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("expected key=value, got '" + text + "'");
  std::string key = text.substr(0, eq);
  std::string value = text.substr(eq + 1);
  auto trim = [](std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  };
  trim(key);
  trim(value);
  return {key, value};
}

}  // namespace detail

inline void validate_spec(const ExperimentSpec& spec) {
  if (spec.axis != SweepAxis::none && spec.sweep_values.empty())
    throw std::invalid_argument("sweep_values must be nonempty when a sweep axis is set");
}

// Flat key=value config file; '#' starts a comment.  Unknown keys are
// rejected with their line number.
inline ExperimentSpec parse_config_stream(std::istream& is) {
  ExperimentSpec spec;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto [key, value] = detail::split_kv(line);
      detail::apply_key(spec, key, value);
    } catch (const std::exception& ex) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  validate_spec(spec);
  return spec;
}

inline ExperimentSpec parse_config_file(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "cannot open config file " + path);
  return parse_config_stream(is);
}

// CLI-style overrides: "--key=value" or "key=value", applied in order on
// top of an existing spec.
inline void apply_overrides(ExperimentSpec& spec, const std::vector<std::string>& overrides) {
  for (const std::string& raw : overrides) {
    std::string text = raw;
    if (text.rfind("--", 0) == 0) text = text.substr(2);
    const auto [key, value] = detail::split_kv(text);
    detail::apply_key(spec, key, value);
  }
  validate_spec(spec);
}

}  // namespace vrer
