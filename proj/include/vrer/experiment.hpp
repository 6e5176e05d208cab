#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>

#include "vrer/config.hpp"

namespace vrer {

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_metrics_csv(const std::vector<IterationMetrics>& rows, std::ostream& os) {
  os << "k,steps,mean_return,reuse_ratio,pg_trace_var,lr_trace_var,zeta_hat,"
        "mean_kl_min,mean_kl_max,wall_ms\n";
  for (const auto& m : rows) {
    os << m.k << ',' << m.steps << ',' << detail::fmt(m.mean_return) << ','
       << detail::fmt(m.reuse_ratio) << ',' << detail::fmt(m.pg_trace_var) << ','
       << detail::fmt(m.lr_trace_var) << ',' << detail::fmt(m.zeta_hat) << ','
       << detail::fmt(m.mean_kl_min) << ',' << detail::fmt(m.mean_kl_max) << ',' << m.wall_ms
       << '\n';
  }
}

inline void write_episodes_csv(const std::vector<EpisodeRecord>& rows, std::ostream& os) {
  os << "step,episode_return\n";
  for (const auto& e : rows) os << e.step << ',' << detail::fmt(e.episode_return) << '\n';
}

inline void write_decisions_csv(const std::vector<DecisionRecord>& rows, std::ostream& os) {
  os << "k,candidate,statistic,threshold,accepted\n";
  for (const auto& d : rows)
    os << d.iteration << ',' << d.candidate << ',' << detail::fmt(d.statistic) << ','
       << detail::fmt(d.threshold) << ',' << (d.accepted ? 1 : 0) << '\n';
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

struct RunFiles {
  std::vector<IterationMetrics> metrics;
  std::vector<EpisodeRecord> episodes;
};

inline RunFiles read_run(const std::filesystem::path& dir) {
  RunFiles out;
  for (const auto& row : read_csv((dir / "metrics.csv").string())) {
    if (row[0] == "k") continue;
    IterationMetrics m;
    m.k = std::stoi(row[0]);
    m.steps = std::stol(row[1]);
    m.mean_return = std::stod(row[2]);
    m.reuse_ratio = std::stod(row[3]);
    m.pg_trace_var = std::stod(row[4]);
    m.lr_trace_var = std::stod(row[5]);
    m.zeta_hat = std::stod(row[6]);
    m.mean_kl_min = std::stod(row[7]);
    m.mean_kl_max = std::stod(row[8]);
    m.wall_ms = std::stol(row[9]);
    out.metrics.push_back(m);
  }
  if (std::filesystem::exists(dir / "episodes.csv")) {
    for (const auto& row : read_csv((dir / "episodes.csv").string())) {
      if (row[0] == "step") continue;
      out.episodes.push_back({std::stol(row[0]), std::stod(row[1])});
    }
  }
  return out;
}

// Mean episode return over the trailing window (10k steps, or the last 10%
// of a shorter run).  Falls back to the per-iteration reward metric when no
// episode completed inside the window.
inline double last_window_return(const RunFiles& run) {
  if (run.metrics.empty()) return 0.0;
  const long total = run.metrics.back().steps;
  const long window = total >= 10000
                          ? 10000
                          : static_cast<long>(std::ceil(0.10 * static_cast<double>(total)));
  const long lo = total - window;
  double sum = 0.0;
  long count = 0;
  for (const auto& e : run.episodes)
    if (e.step > lo) {
      sum += e.episode_return;
      ++count;
    }
  if (count > 0) return sum / static_cast<double>(count);
  for (const auto& m : run.metrics)
    if (m.steps > lo) {
      sum += m.mean_return;
      ++count;
    }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

inline double column_mean(const std::vector<IterationMetrics>& rows,
                          double IterationMetrics::*field) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : rows) s += m.*field;
  return s / static_cast<double>(rows.size());
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const Vec& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

}  // namespace detail

// Two-sided 97.5% Student-t quantile; exact table through 30 degrees of
// freedom, asymptotic expansion beyond.
inline double t_quantile_975(int df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306,
                                 2.262,  2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
                                 2.110,  2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
                                 2.060,  2.056, 2.052, 2.048, 2.045, 2.042};
  check(df >= 1, "degrees of freedom must be positive");
  if (df <= 30) return table[df - 1];
  const double z = 1.959963984540054;
  return z * (1.0 + (z * z + 1.0) / (4.0 * df));
}

struct RunOutcome {
  std::string series;
  int rep = 0;
  bool ok = false;
  std::string error;
};

namespace detail {

inline void write_run_dir(const std::filesystem::path& dir, const TrainResult& res) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "metrics.csv");
    write_metrics_csv(res.metrics, os);
  }
  {
    std::ofstream os(dir / "episodes.csv");
    write_episodes_csv(res.episodes, os);
  }
  if (!res.decisions.empty()) {
    std::ofstream os(dir / "decisions.csv");
    write_decisions_csv(res.decisions, os);
  }
  save_policy(res.policy, (dir / "policy.bin").string());
  save_critic(res.critic, (dir / "critic.bin").string());
}

inline std::string series_name(SweepAxis axis, double value) {
  char buf[64];
  if (axis == SweepAxis::c) {
    std::snprintf(buf, sizeof buf, "vrer_c%g", value);
  } else if (axis == SweepAxis::buffer) {
    std::snprintf(buf, sizeof buf, "vrer_B%g", value);
  } else {
    return "vrer";
  }
  return buf;
}

}  // namespace detail

// Recomputes summary.csv from the per-run CSV files under `dir`.  Baseline
// runs pair with each VRER series by replication for the relative-variance
// difference column.
inline void summarize_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::map<std::string, std::vector<detail::RunFiles>> by_series;
  for (const auto& series_entry : fs::directory_iterator(dir)) {
    if (!series_entry.is_directory()) continue;
    const std::string series = series_entry.path().filename().string();
    std::map<int, detail::RunFiles> reps;
    for (const auto& rep_entry : fs::directory_iterator(series_entry.path())) {
      const std::string name = rep_entry.path().filename().string();
      if (name.rfind("rep", 0) != 0) continue;
      reps[std::stoi(name.substr(3))] = detail::read_run(rep_entry.path());
    }
    auto& list = by_series[series];
    for (auto& [r, run] : reps) list.push_back(std::move(run));
  }

  std::ofstream os(fs::path(dir) / "summary.csv");
  os << "series,reps,return_mean,return_std,reuse_mean,reuse_std,"
        "relvar_diff_mean,relvar_diff_std\n";
  const auto* baseline =
      by_series.count("baseline") ? &by_series.at("baseline") : nullptr;
  for (const auto& [series, runs] : by_series) {
    Vec returns, reuse, relvar;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      returns.push_back(detail::last_window_return(runs[r]));
      reuse.push_back(detail::column_mean(runs[r].metrics, &IterationMetrics::reuse_ratio));
      if (series != "baseline" && baseline && r < baseline->size()) {
        const double zb =
            detail::column_mean((*baseline)[r].metrics, &IterationMetrics::zeta_hat);
        const double zv = detail::column_mean(runs[r].metrics, &IterationMetrics::zeta_hat);
        relvar.push_back(zb - zv);
      }
    }
    const auto ret = detail::mean_std(returns);
    const auto reu = detail::mean_std(reuse);
    const auto rv = detail::mean_std(relvar);
    os << series << ',' << runs.size() << ',' << detail::fmt(ret.mean) << ','
       << detail::fmt(ret.std) << ',' << detail::fmt(reu.mean) << ',' << detail::fmt(reu.std)
       << ',' << (relvar.empty() ? "" : detail::fmt(rv.mean)) << ','
       << (relvar.empty() ? "" : detail::fmt(rv.std)) << '\n';
  }
}

// Long-format reward curves with 95% t-intervals across replications.
inline void emit_plot_data(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ofstream os(fs::path(dir) / "plot.csv");
  os << "series,step,mean,ci_low,ci_high\n";
  std::vector<std::string> series_names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) series_names.push_back(e.path().filename().string());
  std::sort(series_names.begin(), series_names.end());
  for (const std::string& series : series_names) {
    std::vector<detail::RunFiles> runs;
    std::map<int, detail::RunFiles> reps;
    for (const auto& rep_entry : fs::directory_iterator(fs::path(dir) / series)) {
      const std::string name = rep_entry.path().filename().string();
      if (name.rfind("rep", 0) != 0) continue;
      reps[std::stoi(name.substr(3))] = detail::read_run(rep_entry.path());
    }
    for (auto& [r, run] : reps) runs.push_back(std::move(run));
    if (runs.empty()) continue;
    std::size_t rows = runs.front().metrics.size();
    for (const auto& run : runs) rows = std::min(rows, run.metrics.size());
    for (std::size_t i = 0; i < rows; ++i) {
      Vec xs;
      for (const auto& run : runs) xs.push_back(run.metrics[i].mean_return);
      const auto ms = detail::mean_std(xs);
      os << series << ',' << runs.front().metrics[i].steps << ',' << detail::fmt(ms.mean) << ',';
      if (xs.size() >= 2) {
        const double half =
            t_quantile_975(static_cast<int>(xs.size()) - 1) * ms.std / std::sqrt(xs.size());
        os << detail::fmt(ms.mean - half) << ',' << detail::fmt(ms.mean + half);
      } else {
        os << ',';
      }
      os << '\n';
    }
  }
}

// Runs macro_replications x (baseline + every sweep point), pairing seeds
// across series.  Individual run failures are recorded and the rest of the
// sweep continues.
inline std::vector<RunOutcome> run_experiment(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  validate_spec(spec);
  fs::create_directories(spec.out_dir);
  std::vector<RunOutcome> outcomes;

  std::vector<std::pair<std::string, TrainConfig>> series;
  {
    TrainConfig base = spec.train;
    base.vrer = false;
    series.emplace_back("baseline", base);
  }
  if (spec.axis == SweepAxis::none) {
    series.emplace_back("vrer", spec.train);
  } else {
    for (double v : spec.sweep_values) {
      TrainConfig cfg = spec.train;
      if (spec.axis == SweepAxis::c) {
        cfg.selection.c = v;
      } else {
        cfg.buffer_capacity = static_cast<std::size_t>(v);
      }
      series.emplace_back(detail::series_name(spec.axis, v), cfg);
    }
  }

  for (auto& [name, cfg] : series) {
    for (int r = 0; r < spec.macro_replications; ++r) {
      TrainConfig run_cfg = cfg;
      run_cfg.seed = spec.train.seed + static_cast<std::uint64_t>(r);
      RunOutcome outcome;
      outcome.series = name;
      outcome.rep = r;
      try {
        TrainResult res = train(run_cfg);
        detail::write_run_dir(fs::path(spec.out_dir) / name / ("rep" + std::to_string(r)), res);
        outcome.ok = true;
      } catch (const std::exception& ex) {
        outcome.error = ex.what();
        std::ofstream fail(fs::path(spec.out_dir) / "failures.txt", std::ios::app);
        fail << name << " rep" << r << ": " << ex.what() << '\n';
      }
      outcomes.push_back(std::move(outcome));
    }
  }
  summarize_dir(spec.out_dir);
  emit_plot_data(spec.out_dir);
  return outcomes;
}

}  // namespace vrer
