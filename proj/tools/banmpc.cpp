// Command-line front end: data generation, training, closed-loop runs and
// benchmarks on scenario files.

#include "banmpc/bench.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace banmpc;

namespace {

enum Exit { kOk = 0, kUnsafe = 2, kSolverFailure = 3, kConfig = 4 };

struct Common {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string artifacts;  // defaults to out
  std::string controller = "ban-mpc";
  int workers = 1;
};

Scenario load(const Common& c) {
  Scenario sc = load_scenario(c.scenario);
  if (c.seed) set_seed(sc, *c.seed);
  sc.training.sampler.workers = c.workers;
  sc.training.dagger.labels.workers = c.workers;
  return sc;
}

std::string fmt_pct(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string artifact_dir(const Common& c) { return c.artifacts.empty() ? c.out : c.artifacts; }

fs::path out_file(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return fs::path(c.out) / name;
}

LabelOptions label_options(const Scenario& sc) {
  LabelOptions o;
  o.sensitivity = true;
  o.workers = sc.training.sampler.workers;
  return o;
}

ExpertData expert_data(const Common& c, const Scenario& sc) {
  const fs::path path = fs::path(artifact_dir(c)) / "expert.dat";
  if (fs::exists(path)) return load_dataset(path.string());
  std::cerr << "no " << path.string() << ", generating expert data\n";
  ExpertData d = generate_expert_dataset(sc.training.sampler, sc.expert_ocp(), label_options(sc));
  save_dataset(out_file(c, "expert.dat").string(), d);
  return d;
}

int gen_data(const Common& c) {
  const Scenario sc = load(c);
  const ExpertData d = generate_expert_dataset(sc.training.sampler, sc.expert_ocp(), label_options(sc));
  save_dataset(out_file(c, "expert.dat").string(), d);
  std::printf("%ld labels (%ld attempted, %ld dropped) -> %s\n", static_cast<long>(d.count()),
              static_cast<long>(d.attempted), static_cast<long>(d.dropped),
              out_file(c, "expert.dat").c_str());
  return kOk;
}

int train_vf(const Common& c) {
  const Scenario sc = load(c);
  const ExpertData data = expert_data(c, sc);
  DaggerConfig cfg = sc.training.dagger;
  cfg.label_sensitivities = true;
  cfg.labels = label_options(sc);
  const OcpSpec expert = sc.expert_ocp();
  const DaggerResult r = vf_dagger(data, expert, expert.with_horizon(sc.short_horizon), sc.start_box, cfg);
  for (std::size_t i = 0; i < r.iterations.size(); ++i) {
    const DaggerIteration& it = r.iterations[i];
    std::printf("iteration %zu: |D| %ld (+%ld, %ld dropped), beta %.3f, rollout mse %.4g, validation %.4g\n",
                i + 1, static_cast<long>(it.dataset_size), static_cast<long>(it.added),
                static_cast<long>(it.dropped), it.beta, it.rollout_mse, it.validation_loss);
  }
  std::printf("best iterate V_%d\n", r.best_iterate);
  save_network(out_file(c, "value.net").string(), r.value);
  save_dataset(out_file(c, "aggregated.dat").string(), r.aggregated);
  return kOk;
}

int train_sens(const Common& c) {
  const Scenario sc = load(c);
  const fs::path agg = fs::path(artifact_dir(c)) / "aggregated.dat";
  const ExpertData data = fs::exists(agg) ? load_dataset(agg.string()) : expert_data(c, sc);
  TrainHistory h;
  const MlpNetwork net = train_sensitivity(data, sc.training.sensitivity_net, &h);
  save_network(out_file(c, "sensitivity.net").string(), net);
  std::printf("sensitivity network on %ld records\n", static_cast<long>(data.count()));
  return kOk;
}

int train_ampc_cmd(const Common& c) {
  const Scenario sc = load(c);
  const ExpertData data = expert_data(c, sc);
  const MlpNetwork net = train_ampc(data, sc.training.policy_net);
  save_network(out_file(c, "policy.net").string(), net);
  std::printf("policy network on %ld records\n", static_cast<long>(data.count()));
  return kOk;
}

int run(const Common& c) {
  const Scenario sc = load(c);
  const ControllerKind kind = controller_kind(c.controller);
  auto ctl = make_controller(sc, kind, Artifacts::load(artifact_dir(c)));
  const RunReport rep = run_closed_loop(sc, *ctl);
  {
    std::ofstream csv(out_file(c, "trajectory.csv"));
    write_trajectory_csv(csv, rep);
    std::ofstream report(out_file(c, "report.yaml"));
    write_report(report, rep, sc.dt);
  }
  write_report(std::cout, rep, sc.dt);
  if (!rep.safe) return kUnsafe;
  if (rep.failed) return kSolverFailure;
  return kOk;
}

int bench(const Common& c) {
  const Scenario sc = load(c);
  const Artifacts art = Artifacts::load(artifact_dir(c));
  const auto starts = start_states(sc, sc.start_states, sc.seed + 10);

  std::vector<RunReport> baseline;
  {
    auto cbf = make_controller(sc, ControllerKind::kCbfMpc, art);
    for (const auto& x : starts) baseline.push_back(run_closed_loop(sc, *cbf, x));
  }

  std::ofstream out(out_file(c, "bench.yaml"));
  out << "format: banmpc-bench 1\nscenario: " << sc.name << "\ncontrollers:\n";
  bool unsafe = false;
  for (ControllerKind kind : {ControllerKind::kCbfMpc, ControllerKind::kShort, ControllerKind::kAmpc,
                              ControllerKind::kNeural, ControllerKind::kBanMpc}) {
    std::unique_ptr<Controller> ctl;
    try {
      ctl = make_controller(sc, kind, art);
    } catch (const ConfigError& e) {
      std::cerr << "skipping " << to_string(kind) << ": " << e.what() << '\n';
      continue;
    }
    std::vector<RunReport> runs;
    int reached = 0;
    double min_h = std::numeric_limits<double>::infinity();
    for (const auto& x : starts) {
      runs.push_back(run_closed_loop(sc, *ctl, x));
      reached += runs.back().goal_reached;
      min_h = std::min(min_h, runs.back().min_h);
      unsafe |= !runs.back().safe;
    }
    const RunReport nominal = run_closed_loop(sc, *ctl);
    unsafe |= !nominal.safe;
    out << "  - controller: " << to_string(kind) << '\n';
    out << "    domain_safety_pct: " << domain_safety(sc, *ctl, sc.domain_samples, sc.seed + 20) << '\n';
    const auto boundary = boundary_safety(sc, *ctl, sc.boundary_samples, sc.boundary_band, sc.seed + 30);
    out << "    boundary_safety_pct: " << (boundary ? fmt_pct(*boundary) : "n/a") << '\n';
    try {
      const double sub = average_suboptimality(runs, baseline);
      out << "    suboptimality_pct: " << sub << '\n';
    } catch (const NotComparable& e) {
      out << "    suboptimality_pct: n/a  # " << e.what() << '\n';
    }
    const TimingProfile t = timing_profile(*ctl, starts, 1);
    out << "    solve_time_median_s: " << t.median << '\n';
    out << "    solve_time_mean_s: " << t.mean << '\n';
    out << "    solve_time_p95_s: " << t.p95 << '\n';
    out << "    utilization: " << t.median / sc.dt << '\n';
    out << "    goals_reached: " << reached << " / " << starts.size() << '\n';
    out << "    min_h: " << min_h << '\n';
    out << "    nominal_goal_reached: " << (nominal.goal_reached ? "true" : "false") << '\n';
    out << "    nominal_cost: " << nominal.cost << '\n';
    std::cerr << "finished " << to_string(kind) << '\n';
  }
  out.close();
  std::ifstream back(out_file(c, "bench.yaml"));
  std::cout << back.rdbuf();
  return unsafe ? kUnsafe : kOk;
}

int sweep(const Common& c, const std::vector<double>& deviations) {
  const Scenario sc = load(c);
  const auto rows = adaptation_sweep(sc, deviations, Artifacts::load(artifact_dir(c)));
  std::ofstream out(out_file(c, "sweep.csv"));
  out << "# banmpc-sweep 1\ndeviation,ban_error_pct,neural_error_pct,ban_min_h,neural_min_h,ban_goal,neural_goal\n";
  bool unsafe = false;
  for (const SweepRow& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%g,%.6g,%.6g,%.6g,%.6g,%d,%d\n", r.deviation, r.ban_error,
                  r.neural_error, r.ban_min_h, r.neural_min_h, r.ban_goal, r.neural_goal);
    out << line;
    std::cout << line;
    unsafe |= r.ban_min_h < -1e-6;
  }
  return unsafe ? kUnsafe : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Barrier-certified neural MPC toolkit"};
  app.require_subcommand(1);
  Common c;
  std::vector<double> deviations{-0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15};

  auto add_common = [&](CLI::App* sub, bool controller) {
    sub->add_option("--scenario", c.scenario, "scenario file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "overrides the scenario seed");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--artifacts", c.artifacts, "directory with trained networks (default: --out)");
    sub->add_option("--workers", c.workers, "parallel expert solves")->check(CLI::PositiveNumber);
    if (controller) {
      sub->add_option("--controller", c.controller, "controller")
          ->check(CLI::IsMember({"cbf-mpc", "short", "ampc", "neural", "ban-mpc"}))
          ->capture_default_str();
    }
  };
  std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
  auto add = [&](const char* name, const char* help, bool controller, std::function<int()> fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, controller);
    commands.emplace_back(sub, std::move(fn));
    return sub;
  };
  add("gen-data", "label states with the expert MPC", false, [&] { return gen_data(c); });
  add("train-vf", "VF-DAGGER for the terminal value network", false, [&] { return train_vf(c); });
  add("train-sens", "fit the value-sensitivity network", false, [&] { return train_sens(c); });
  add("train-ampc", "behavioral cloning baseline", false, [&] { return train_ampc_cmd(c); });
  add("run", "one closed-loop run from the scenario start", true, [&] { return run(c); });
  add("bench", "safety, suboptimality and timing for all controllers", false, [&] { return bench(c); });
  add("sweep-theta", "control error under parameter deviations", false, [&] { return sweep(c, deviations); })
      ->add_option("--deviations", deviations, "fractional deviations of theta_true");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  try {
    for (auto& [sub, fn] : commands) {
      if (sub->parsed()) return fn();
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const TooManyFailures& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverFailure;
  } catch (const NlpError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
