#pragma once

// Scenarios, closed-loop simulation, safety and optimality metrics, timing
// and the training pipeline behind the command-line tool.

#include "banmpc/controllers.hpp"
#include "banmpc/training.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace banmpc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingPlan {
  SamplerConfig sampler;  // box, sample count and trajectory share; seed from the scenario
  DaggerConfig dagger;
  NetworkConfig value_net;
  NetworkConfig sensitivity_net;
  NetworkConfig policy_net;
};

struct Scenario {
  std::string name;
  std::string provenance;
  std::uint64_t seed = 0;
  Model model = Unicycle{};
  StateVector start;
  StateVector goal;
  SafetySpec safety;
  Vector theta_nom;
  Vector theta_true;

  int horizon = 30;       // N
  int short_horizon = 3;  // M
  double dt = 0.1;
  Vector q;
  Vector r;
  Bounds state_bounds;
  Bounds input_bounds;

  int max_steps = 200;
  /// Position distance to the goal that ends a run.
  double goal_tolerance = 0.05;
  /// Consecutive non-converged steps tolerated before a run is flagged failed.
  int fallback_budget = 10;

  int domain_samples = 1000;
  int boundary_samples = 1000;
  int rollout_steps = 20;
  double boundary_band = 0.5;
  int start_states = 20;
  Bounds metric_box;  // states for safety metrics
  Bounds start_box;   // starts for averaged metrics and DAGGER rollouts

  TrainingPlan training;

  /// Problem at planning parameters theta (nominal parameters stay theta_nom).
  OcpSpec ocp(const Vector& theta, int horizon_override = 0) const;
  /// Long-horizon problem at theta_nom with moving obstacles removed, used for labels.
  OcpSpec expert_ocp() const;
  DiscreteDynamics true_dynamics() const;
  void validate() const;
};

/// Reads a scenario file; unknown keys and missing required keys raise ConfigError.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);
/// Sets the scenario seed and the training seeds derived from it.
void set_seed(Scenario& sc, std::uint64_t seed);

struct Artifacts {
  std::shared_ptr<const MlpNetwork> value;
  std::shared_ptr<const MlpNetwork> sensitivity;
  std::shared_ptr<const MlpNetwork> policy;

  /// Files value.net, sensitivity.net and policy.net; absent files stay null.
  static Artifacts load(const std::string& dir);
  void save(const std::string& dir) const;
};

enum class ControllerKind { kCbfMpc, kShort, kAmpc, kNeural, kBanMpc };
ControllerKind controller_kind(const std::string& id);
std::string to_string(ControllerKind kind);

/// Builds a controller. Planning parameters are theta_nom for CBF-MPC, the
/// short-horizon MPC and Neural MPC unless plan_true is set; BAN-MPC always
/// plans with theta_true and adapts its terminal value to it.
std::unique_ptr<Controller> make_controller(const Scenario& sc, ControllerKind kind,
                                            const Artifacts& artifacts, bool plan_true = false,
                                            MpcOptions opts = {});

struct RunStep {
  double t = 0.0;
  StateVector x;
  InputVector u;  // NaN on the final row
  double h = 0.0;
  double solve_time = 0.0;
  std::optional<ControlStatus> status;  // empty on the final row
};

struct RunReport {
  std::string scenario;
  std::string controller;
  std::vector<RunStep> rows;
  bool goal_reached = false;
  bool failed = false;
  bool safe = true;
  double cost = 0.0;
  double min_h = 0.0;
  double mean_solve_time = 0.0;
  double median_solve_time = 0.0;
  int degraded_steps = 0;
  int failed_steps = 0;

  int steps() const { return static_cast<int>(rows.size()) - 1; }
};

/// Quadratic stage cost of the scenario at the true parameters.
double stage_cost(const Scenario& sc, const StateVector& x, const InputVector& u);

/// Simulates x+ = RK4(x, u, theta_true) from start (the scenario start when
/// empty) until the goal tolerance or max_steps.
RunReport run_closed_loop(const Scenario& sc, Controller& controller,
                          const std::optional<StateVector>& start = std::nullopt);

/// Recomputes the summary metrics from the rows.
void summarize(const Scenario& sc, RunReport& report);

/// States drawn from the safe part of the start box.
std::vector<StateVector> start_states(const Scenario& sc, int n, std::uint64_t seed);

/// Percentage of K-step rollouts from uniform safe states that stay safe.
double domain_safety(const Scenario& sc, Controller& controller, int n, std::uint64_t seed);
/// As domain_safety with starts within band of an inflated obstacle boundary;
/// empty for scenes without obstacles.
std::optional<double> boundary_safety(const Scenario& sc, Controller& controller, int n,
                                      double band, std::uint64_t seed);

class NotComparable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 100 (cost - baseline) / baseline.
double suboptimality(const RunReport& report, const RunReport& baseline);
/// Mean over paired runs.
double average_suboptimality(const std::vector<RunReport>& reports,
                             const std::vector<RunReport>& baselines);

struct TimingProfile {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  int samples = 0;
};

/// Wall-clock time per control call from a reset controller.
TimingProfile timing_profile(Controller& controller, const std::vector<StateVector>& states,
                             int repetitions);

/// 100 * RMS over time of the position gap, relative to the start-goal distance.
double control_error(const Scenario& sc, const RunReport& run, const RunReport& reference);

struct SweepRow {
  double deviation = 0.0;
  double ban_error = 0.0;
  double neural_error = 0.0;
  double ban_min_h = 0.0;
  double neural_min_h = 0.0;
  bool ban_goal = false;
  bool neural_goal = false;
};

/// theta_true = theta_nom (1 + deviation) for each entry; errors are against
/// CBF-MPC planning with theta_true.
std::vector<SweepRow> adaptation_sweep(const Scenario& sc, const std::vector<double>& deviations,
                                       const Artifacts& artifacts);

struct PipelineLog {
  ExpertData expert;
  DaggerResult dagger;
};

/// Expert data with sensitivity labels, VF-DAGGER for the value network,
/// sensitivity training on the aggregated data and behavioral cloning on the
/// expert data.
Artifacts train_artifacts(const Scenario& sc, PipelineLog* log = nullptr);

void write_trajectory_csv(std::ostream& out, const RunReport& report);
/// Metrics as versioned key/value text; utilization is mean solve time over dt.
void write_report(std::ostream& out, const RunReport& report, double dt);

}  // namespace banmpc
