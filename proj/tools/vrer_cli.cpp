// Experiment CLI: single runs, sweeps, tabular convergence probes, and
// report regeneration from existing run directories.

#include <filesystem>
#include <iostream>

#include "vrer/vrer.hpp"

namespace {

void usage() {
  std::cout <<
      "usage: vrer <verb> [--config FILE] [--key=value ...]\n"
      "\n"
      "verbs:\n"
      "  train    run one baseline/VRER pair and write run artifacts\n"
      "  sweep    run a sweep over c or buffer size (sweep=c|buffer)\n"
      "  probe    tabular convergence diagnostic on a chain MDP\n"
      "  report   recompute summary.csv and plot.csv from an out dir\n"
      "\n"
      "keys mirror the config file; see README for the full list.\n";
}

vrer::ExperimentSpec spec_from_args(const std::vector<std::string>& args) {
  vrer::ExperimentSpec spec;
  std::vector<std::string> overrides;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw std::invalid_argument("--config needs a path");
      spec = vrer::parse_config_file(args[++i]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      spec = vrer::parse_config_file(args[i].substr(9));
    } else {
      overrides.push_back(args[i]);
    }
  }
  vrer::apply_overrides(spec, overrides);
  return spec;
}

int run_train_or_sweep(const vrer::ExperimentSpec& spec) {
  const auto outcomes = vrer::run_experiment(spec);
  bool all_ok = true;
  for (const auto& o : outcomes) {
    std::cout << (o.ok ? "ok   " : "FAIL ") << o.series << " rep" << o.rep;
    if (!o.ok) std::cout << "  (" << o.error << ")";
    std::cout << '\n';
    all_ok = all_ok && o.ok;
  }
  std::cout << "artifacts: " << spec.out_dir << "/summary.csv, " << spec.out_dir << "/plot.csv\n";
  return all_ok ? 0 : 1;
}

int run_probe(const vrer::ExperimentSpec& spec) {
  if (spec.train.env.rfind("chain:", 0) != 0)
    throw std::invalid_argument("probe requires env=chain:<file>");
  vrer::ChainMDP mdp = vrer::ChainMDP::from_file(spec.train.env.substr(6));
  const vrer::Vec running = vrer::tabular_convergence_probe(mdp, spec.train);
  std::filesystem::create_directories(spec.out_dir);
  std::ofstream os(std::filesystem::path(spec.out_dir) / "probe.csv");
  os << "k,running_avg_grad_norm2\n";
  char buf[40];
  for (std::size_t k = 0; k < running.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", running[k]);
    os << (k + 1) << ',' << buf << '\n';
  }
  std::cout << "artifacts: " << spec.out_dir << "/probe.csv (" << running.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return 2;
  }
  const std::string verb = argv[1];
  std::vector<std::string> args(argv + 2, argv + argc);
  try {
    if (verb == "train" || verb == "sweep") {
      vrer::ExperimentSpec spec = spec_from_args(args);
      if (verb == "train") spec.axis = vrer::SweepAxis::none;
      return run_train_or_sweep(spec);
    }
    if (verb == "probe") return run_probe(spec_from_args(args));
    if (verb == "report") {
      std::string dir = "runs";
      for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--dir" && i + 1 < args.size()) dir = args[++i];
        else if (args[i].rfind("--dir=", 0) == 0) dir = args[i].substr(6);
        else if (args[i].rfind("out=", 0) == 0) dir = args[i].substr(4);
      }
      vrer::summarize_dir(dir);
      vrer::emit_plot_data(dir);
      std::cout << "artifacts: " << dir << "/summary.csv, " << dir << "/plot.csv\n";
      return 0;
    }
    if (verb == "--help" || verb == "-h" || verb == "help") {
      usage();
      return 0;
    }
    std::cerr << "unknown verb '" << verb << "'\n";
    usage();
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
}
