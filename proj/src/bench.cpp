#include "banmpc/bench.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace banmpc {

namespace {

constexpr double kSafetyTolerance = 1e-6;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Map node whose keys are checked off as they are read.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(path_ + ": expected a mapping");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return node_ && node_[key] && !node_[key].IsNull();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(node_[key], where(key));
  }

  template <typename T>
  T required(const std::string& key) {
    if (!has(key)) throw ConfigError(where(key) + ": required key missing");
    return convert<T>(node_[key], where(key));
  }

  Vector vector(const std::string& key) {
    if (!has(key)) throw ConfigError(where(key) + ": required key missing");
    return to_vector(node_[key], where(key));
  }
  Vector vector(const std::string& key, const Vector& fallback) {
    return has(key) ? to_vector(node_[key], where(key)) : fallback;
  }

  Section child(const std::string& key) {
    known_.insert(key);
    return Section(node_ ? node_[key] : YAML::Node(), where(key));
  }
  YAML::Node raw(const std::string& key) {
    known_.insert(key);
    return node_ ? node_[key] : YAML::Node();
  }

  /// Rejects keys that were never asked for.
  void finish() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!known_.count(key)) throw ConfigError(where(key) + ": unknown key");
    }
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  static Vector to_vector(const YAML::Node& n, const std::string& where) {
    if (!n.IsSequence()) throw ConfigError(where + ": expected a list of numbers");
    Vector v(static_cast<Index>(n.size()));
    for (std::size_t i = 0; i < n.size(); ++i) v(static_cast<Index>(i)) = convert<double>(n[i], where);
    return v;
  }

  template <typename T>
  static T convert(const YAML::Node& n, const std::string& where) {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where + ": invalid value");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> known_;
};

Bounds read_bounds(Section s, Index n, bool required) {
  Bounds b = Bounds::unbounded(n);
  if (required || s.has("lower")) b.lower = s.vector("lower");
  if (required || s.has("upper")) b.upper = s.vector("upper");
  s.finish();
  return b;
}

Obstacle read_obstacle(Section s) {
  Obstacle o;
  o.center = s.vector("center");
  o.radius = s.required<double>("radius");
  if (s.has("velocity")) o.motion = ConstantVelocity{s.vector("velocity")};
  if (s.has("waypoints")) {
    if (o.motion) throw ConfigError(s.where("waypoints") + ": an obstacle has at most one motion model");
    Section w = s.child("waypoints");
    Waypoints wp;
    const Vector times = w.vector("times");
    wp.times.assign(times.data(), times.data() + times.size());
    for (const auto& p : w.raw("points")) wp.points.push_back(Section::to_vector(p, w.where("points")));
    w.finish();
    o.motion = wp;
  }
  s.finish();
  return o;
}

TrainOptions read_train(Section& s, TrainOptions t) {
  t.epochs = s.get("epochs", t.epochs);
  t.batch = s.get("batch", t.batch);
  t.learning_rate = s.get("learning_rate", t.learning_rate);
  t.final_learning_rate = s.get("final_learning_rate", t.final_learning_rate);
  t.validation_fraction = s.get("validation_fraction", t.validation_fraction);
  return t;
}

NetworkConfig read_network(Section s, NetworkConfig cfg) {
  if (s.has("hidden")) {
    const Vector h = s.vector("hidden");
    cfg.hidden.clear();
    for (Index i = 0; i < h.size(); ++i) {
      if (!(h(i) >= 1.0) || h(i) != std::floor(h(i))) throw ConfigError(s.where("hidden") + ": widths must be positive integers");
      cfg.hidden.push_back(static_cast<Index>(h(i)));
    }
  }
  cfg.train = read_train(s, cfg.train);
  s.finish();
  return cfg;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool at_goal(const Scenario& sc, const DiscreteDynamics& dyn, const StateVector& x) {
  return (dyn.position(x) - dyn.position(sc.goal)).norm() <= sc.goal_tolerance;
}

// K-step rollout from x at t = 0; true when every visited state is safe.
bool rollout_safe(const Scenario& sc, const DiscreteDynamics& dyn, Controller& controller,
                  StateVector x) {
  controller.reset();
  double t = 0.0;
  for (int k = 0; k < sc.rollout_steps; ++k) {
    const ControlResult res = controller.control(x, t);
    x = rk4_step(dyn, x, res.u0);
    dyn.canonicalize(x);
    t += sc.dt;
    if (!(safety_value(dyn, x, sc.safety, t) >= -kSafetyTolerance)) return false;
  }
  return true;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

OcpSpec Scenario::ocp(const Vector& theta, int horizon_override) const {
  const DiscreteDynamics dyn(model, dt, ModelParams{theta, theta_nom});
  return OcpSpec{horizon_override > 0 ? horizon_override : horizon,
                 dyn,
                 q,
                 r,
                 goal,
                 state_bounds,
                 input_bounds,
                 safety};
}

OcpSpec Scenario::expert_ocp() const {
  OcpSpec s = ocp(theta_nom);
  std::vector<Obstacle> fixed;
  for (const Obstacle& o : safety.obstacles) {
    if (o.is_static()) fixed.push_back(o);
  }
  s.safety.obstacles = std::move(fixed);
  return s;
}

DiscreteDynamics Scenario::true_dynamics() const {
  return DiscreteDynamics(model, dt, ModelParams{theta_true, theta_nom});
}

void Scenario::validate() const {
  if (provenance.empty()) throw ConfigError("scenario: provenance is required");
  if (!(short_horizon >= 1 && horizon > short_horizon)) {
    throw ConfigError("scenario: horizons must satisfy N > M >= 1");
  }
  if (!(dt > 0.0)) throw ConfigError("scenario: dt must be positive");
  if (max_steps < 1 || !(goal_tolerance > 0.0) || fallback_budget < 0) {
    throw ConfigError("scenario: invalid simulation settings");
  }
  if (domain_samples < 1 || boundary_samples < 1 || rollout_steps < 1 || start_states < 1 ||
      !(boundary_band > 0.0)) {
    throw ConfigError("scenario: invalid metric settings");
  }
  try {
    const OcpSpec s = ocp(theta_true);
    s.validate();
    ocp(theta_nom).validate();
    require_dim(start.size(), s.dynamics.state_dim(), "start");
    metric_box.validate(s.dynamics.state_dim(), "metric box");
    start_box.validate(s.dynamics.state_dim(), "start box");
    training.sampler.validate(expert_ocp());
    training.dagger.validate();
    if (!state_bounds.contains(start) || !state_bounds.contains(goal)) {
      throw ConfigError("scenario: start and goal must lie within the state bounds");
    }
    if (safety_value(s.dynamics, start, safety, 0.0) < 0.0 || safety_value(s.dynamics, goal, safety, 0.0) < 0.0) {
      throw ConfigError("scenario: start and goal must be safe");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

Scenario parse_scenario(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  Section top(root, "");
  Scenario sc;
  sc.name = top.required<std::string>("name");
  sc.provenance = top.required<std::string>("provenance");
  sc.seed = top.get<std::uint64_t>("seed", 0);
  try {
    sc.model = model_from_name(top.required<std::string>("system"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  const Index nx = std::visit([](const auto& m) -> Index { return std::decay_t<decltype(m)>::kStateDim; }, sc.model);
  const Index nu = std::visit([](const auto& m) -> Index { return std::decay_t<decltype(m)>::kInputDim; }, sc.model);
  sc.start = top.vector("start");
  sc.goal = top.vector("goal");
  sc.theta_nom = top.vector("theta_nom");
  sc.theta_true = top.vector("theta_true", sc.theta_nom);

  if (top.has("obstacles")) {
    const YAML::Node obs = top.raw("obstacles");
    if (!obs.IsSequence()) throw ConfigError("obstacles: expected a list");
    for (std::size_t i = 0; i < obs.size(); ++i) {
      sc.safety.obstacles.push_back(read_obstacle(Section(obs[i], "obstacles[" + std::to_string(i) + "]")));
    }
  }
  {
    Section s = top.child("safety");
    sc.safety.robot_radius = s.get("robot_radius", sc.safety.robot_radius);
    sc.safety.margin = s.get("margin", sc.safety.margin);
    sc.safety.rho = s.get("rho", sc.safety.rho);
    sc.safety.gamma = s.get("gamma", sc.safety.gamma);
    s.finish();
  }
  {
    Section s = top.child("ocp");
    sc.horizon = s.get("horizon", sc.horizon);
    sc.short_horizon = s.get("short_horizon", sc.short_horizon);
    sc.dt = s.required<double>("dt");
    sc.q = s.vector("q");
    sc.r = s.vector("r");
    sc.state_bounds = read_bounds(s.child("state_bounds"), nx, false);
    sc.input_bounds = read_bounds(s.child("input_bounds"), nu, false);
    s.finish();
  }
  {
    Section s = top.child("sim");
    sc.max_steps = s.get("max_steps", sc.max_steps);
    sc.goal_tolerance = s.get("goal_tolerance", sc.goal_tolerance);
    sc.fallback_budget = s.get("fallback_budget", sc.fallback_budget);
    s.finish();
  }
  {
    Section s = top.child("metrics");
    sc.domain_samples = s.get("domain_samples", sc.domain_samples);
    sc.boundary_samples = s.get("boundary_samples", sc.boundary_samples);
    sc.rollout_steps = s.get("rollout_steps", sc.rollout_steps);
    sc.boundary_band = s.get("boundary_band", sc.boundary_band);
    sc.start_states = s.get("start_states", sc.start_states);
    sc.metric_box = read_bounds(s.child("metric_box"), nx, true);
    sc.start_box = read_bounds(s.child("start_box"), nx, true);
    s.finish();
  }
  {
    Section s = top.child("training");
    TrainingPlan& p = sc.training;
    p.sampler.n_samples = s.get<Index>("samples", 1000);
    p.sampler.trajectory_fraction = s.get("trajectory_fraction", p.sampler.trajectory_fraction);
    p.sampler.trajectory_steps = s.get("trajectory_steps", p.sampler.trajectory_steps);
    p.sampler.workers = s.get("workers", p.sampler.workers);
    p.sampler.box = read_bounds(s.child("sample_box"), nx, true);
    {
      Section d = s.child("dagger");
      p.dagger.iterations = d.get("iterations", p.dagger.iterations);
      p.dagger.steps = d.get("steps", p.dagger.steps);
      p.dagger.trajectories = d.get("trajectories", p.dagger.trajectories);
      p.dagger.validation_fraction = d.get("validation_fraction", p.dagger.validation_fraction);
      p.dagger.retrain_epochs = d.get("retrain_epochs", p.dagger.retrain_epochs);
      if (d.has("beta")) {
        const Vector b = d.vector("beta");
        p.dagger.beta.assign(b.data(), b.data() + b.size());
      }
      d.finish();
    }
    p.value_net = read_network(s.child("value_net"), p.value_net);
    p.sensitivity_net = read_network(s.child("sensitivity_net"), p.sensitivity_net);
    p.policy_net = read_network(s.child("policy_net"), p.policy_net);
    p.dagger.network = p.value_net;
    s.finish();
  }
  top.finish();
  set_seed(sc, sc.seed);
  sc.validate();
  return sc;
}

void set_seed(Scenario& sc, std::uint64_t seed) {
  TrainingPlan& p = sc.training;
  sc.seed = seed;
  p.sampler.seed = seed;
  p.dagger.seed = seed + 1;
  p.value_net.train.seed = seed + 2;
  p.dagger.network.train.seed = seed + 2;
  p.sensitivity_net.train.seed = seed + 3;
  p.policy_net.train.seed = seed + 4;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

Artifacts Artifacts::load(const std::string& dir) {
  Artifacts a;
  auto get = [&](const char* file) -> std::shared_ptr<const MlpNetwork> {
    const std::string path = (std::filesystem::path(dir) / file).string();
    if (!std::filesystem::exists(path)) return nullptr;
    return std::make_shared<const MlpNetwork>(load_network(path));
  };
  a.value = get("value.net");
  a.sensitivity = get("sensitivity.net");
  a.policy = get("policy.net");
  return a;
}

void Artifacts::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  if (value) save_network((std::filesystem::path(dir) / "value.net").string(), *value);
  if (sensitivity) save_network((std::filesystem::path(dir) / "sensitivity.net").string(), *sensitivity);
  if (policy) save_network((std::filesystem::path(dir) / "policy.net").string(), *policy);
}

ControllerKind controller_kind(const std::string& id) {
  if (id == "cbf-mpc") return ControllerKind::kCbfMpc;
  if (id == "short") return ControllerKind::kShort;
  if (id == "ampc") return ControllerKind::kAmpc;
  if (id == "neural") return ControllerKind::kNeural;
  if (id == "ban-mpc") return ControllerKind::kBanMpc;
  throw ConfigError("unknown controller '" + id + "'");
}

std::string to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kCbfMpc: return "cbf-mpc";
    case ControllerKind::kShort: return "short";
    case ControllerKind::kAmpc: return "ampc";
    case ControllerKind::kNeural: return "neural";
    case ControllerKind::kBanMpc: return "ban-mpc";
  }
  return "unknown";
}

std::unique_ptr<Controller> make_controller(const Scenario& sc, ControllerKind kind,
                                            const Artifacts& artifacts, bool plan_true,
                                            MpcOptions opts) {
  const OcpSpec plan = sc.ocp(plan_true ? sc.theta_true : sc.theta_nom);
  auto need = [](const std::shared_ptr<const MlpNetwork>& net, const char* what) {
    if (!net) throw ConfigError(std::string("missing trained ") + what + " network");
    return net;
  };
  switch (kind) {
    case ControllerKind::kCbfMpc:
      return cbf_mpc(plan, opts);
    case ControllerKind::kShort:
      return short_horizon_mpc(plan, sc.short_horizon, opts);
    case ControllerKind::kAmpc:
      return std::make_unique<AmpcController>(need(artifacts.policy, "policy"), sc.input_bounds);
    case ControllerKind::kNeural:
      return neural_mpc(plan, sc.short_horizon, need(artifacts.value, "value"), opts);
    case ControllerKind::kBanMpc:
      return ban_mpc(sc.ocp(sc.theta_true), sc.short_horizon, need(artifacts.value, "value"),
                     need(artifacts.sensitivity, "sensitivity"), opts);
  }
  throw ConfigError("unknown controller");
}

double stage_cost(const Scenario& sc, const StateVector& x, const InputVector& u) {
  const DiscreteDynamics dyn = sc.true_dynamics();
  const Vector e = dyn.cost_error_map(sc.goal) * dyn.state_difference(x, sc.goal);
  const Vector du = u - dyn.rest_input(sc.theta_true);
  return e.dot(sc.q.cwiseProduct(e)) + du.dot(sc.r.cwiseProduct(du));
}

RunReport run_closed_loop(const Scenario& sc, Controller& controller,
                          const std::optional<StateVector>& start) {
  const DiscreteDynamics dyn = sc.true_dynamics();
  RunReport rep;
  rep.scenario = sc.name;
  rep.controller = controller.name();
  controller.reset();
  StateVector x = start ? *start : sc.start;
  require_dim(x.size(), dyn.state_dim(), "start state");
  double t = 0.0;
  int streak = 0;
  for (int k = 0;; ++k) {
    RunStep row;
    row.t = t;
    row.x = x;
    row.h = safety_value(dyn, x, sc.safety, t);
    if (at_goal(sc, dyn, x) || k == sc.max_steps || streak > sc.fallback_budget) {
      row.u = InputVector::Constant(dyn.input_dim(), kNaN);
      rep.rows.push_back(row);
      break;
    }
    const ControlResult res = controller.control(x, t);
    row.u = res.u0;
    row.solve_time = res.solve_time;
    row.status = res.status;
    rep.rows.push_back(row);
    streak = res.status == ControlStatus::kConverged ? 0 : streak + 1;
    x = rk4_step(dyn, x, res.u0);
    dyn.canonicalize(x);
    t += sc.dt;
  }
  summarize(sc, rep);
  return rep;
}

void summarize(const Scenario& sc, RunReport& rep) {
  if (rep.rows.empty()) throw std::invalid_argument("run report without rows");
  const DiscreteDynamics dyn = sc.true_dynamics();
  rep.cost = 0.0;
  rep.min_h = std::numeric_limits<double>::infinity();
  rep.degraded_steps = 0;
  rep.failed_steps = 0;
  std::vector<double> times;
  int streak = 0;
  for (const RunStep& row : rep.rows) {
    rep.min_h = std::min(rep.min_h, row.h);
    if (!row.status) {
      rep.cost += stage_cost(sc, row.x, dyn.rest_input(sc.theta_true));
      continue;
    }
    rep.cost += stage_cost(sc, row.x, row.u);
    times.push_back(row.solve_time);
    if (*row.status == ControlStatus::kDegraded) ++rep.degraded_steps;
    if (*row.status == ControlStatus::kFailed) ++rep.failed_steps;
    streak = *row.status == ControlStatus::kConverged ? 0 : streak + 1;
  }
  rep.goal_reached = at_goal(sc, dyn, rep.rows.back().x);
  rep.failed = streak > sc.fallback_budget;
  rep.safe = rep.min_h >= -kSafetyTolerance;
  rep.mean_solve_time = times.empty() ? 0.0 : std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  rep.median_solve_time = median_of(times);
}

std::vector<StateVector> start_states(const Scenario& sc, int n, std::uint64_t seed) {
  const OcpSpec spec = sc.ocp(sc.theta_true);
  std::mt19937_64 rng(seed);
  std::vector<StateVector> out;
  for (int i = 0; i < n; ++i) out.push_back(sample_safe_state(sc.start_box, spec, rng));
  return out;
}

double domain_safety(const Scenario& sc, Controller& controller, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("domain safety needs at least one sample");
  const OcpSpec spec = sc.ocp(sc.theta_true);
  const DiscreteDynamics dyn = sc.true_dynamics();
  std::mt19937_64 rng(seed);
  int safe = 0;
  for (int i = 0; i < n; ++i) {
    if (rollout_safe(sc, dyn, controller, sample_safe_state(sc.metric_box, spec, rng))) ++safe;
  }
  return 100.0 * safe / n;
}

std::optional<double> boundary_safety(const Scenario& sc, Controller& controller, int n,
                                      double band, std::uint64_t seed) {
  if (!sc.safety.has_obstacles()) return std::nullopt;
  if (n < 1 || !(band > 0.0)) throw std::invalid_argument("boundary safety needs samples and a positive band");
  const OcpSpec spec = sc.ocp(sc.theta_true);
  const DiscreteDynamics dyn = sc.true_dynamics();
  std::mt19937_64 rng(seed);
  int safe = 0;
  for (int i = 0; i < n; ++i) {
    StateVector x;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw std::runtime_error("boundary safety: band is empty within the metric box");
      x = sample_safe_state(sc.metric_box, spec, rng);
      if (nearest_clearance(dyn.position(x), sc.safety, 0.0) <= band) break;
    }
    if (rollout_safe(sc, dyn, controller, x)) ++safe;
  }
  return 100.0 * safe / n;
}

double suboptimality(const RunReport& report, const RunReport& baseline) {
  for (const RunReport* r : {&report, &baseline}) {
    if (!r->goal_reached || r->failed) {
      throw NotComparable("run '" + r->controller + "' did not reach the goal");
    }
  }
  if (!(baseline.cost > 0.0)) throw NotComparable("baseline cost is not positive");
  return 100.0 * (report.cost - baseline.cost) / baseline.cost;
}

double average_suboptimality(const std::vector<RunReport>& reports,
                             const std::vector<RunReport>& baselines) {
  if (reports.size() != baselines.size() || reports.empty()) {
    throw std::invalid_argument("suboptimality needs paired, nonempty run lists");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) sum += suboptimality(reports[i], baselines[i]);
  return sum / static_cast<double>(reports.size());
}

TimingProfile timing_profile(Controller& controller, const std::vector<StateVector>& states,
                             int repetitions) {
  if (states.empty() || repetitions < 1) throw std::invalid_argument("timing needs states and repetitions");
  controller.reset();
  controller.control(states.front(), 0.0);  // warm-up
  std::vector<double> times;
  for (int rep = 0; rep < repetitions; ++rep) {
    for (const StateVector& x : states) {
      controller.reset();
      const auto start = std::chrono::steady_clock::now();
      controller.control(x, 0.0);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
  }
  TimingProfile p;
  p.samples = static_cast<int>(times.size());
  p.mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  p.median = median_of(times);
  std::sort(times.begin(), times.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(times.size())));
  p.p95 = times[std::max<std::size_t>(rank, 1) - 1];
  return p;
}

double control_error(const Scenario& sc, const RunReport& run, const RunReport& reference) {
  const DiscreteDynamics dyn = sc.true_dynamics();
  const std::size_t n = std::max(run.rows.size(), reference.rows.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const StateVector& a = run.rows[std::min(k, run.rows.size() - 1)].x;
    const StateVector& b = reference.rows[std::min(k, reference.rows.size() - 1)].x;
    sum += (dyn.position(a) - dyn.position(b)).squaredNorm();
  }
  const double scale = (dyn.position(reference.rows.front().x) - dyn.position(sc.goal)).norm();
  return 100.0 * std::sqrt(sum / static_cast<double>(n)) / scale;
}

std::vector<SweepRow> adaptation_sweep(const Scenario& sc, const std::vector<double>& deviations,
                                       const Artifacts& artifacts) {
  std::vector<SweepRow> rows;
  for (double d : deviations) {
    Scenario s = sc;
    s.theta_true = sc.theta_nom * (1.0 + d);
    auto oracle = make_controller(s, ControllerKind::kCbfMpc, artifacts, true);
    auto ban = make_controller(s, ControllerKind::kBanMpc, artifacts);
    auto neural = make_controller(s, ControllerKind::kNeural, artifacts);
    const RunReport ref = run_closed_loop(s, *oracle);
    const RunReport rb = run_closed_loop(s, *ban);
    const RunReport rn = run_closed_loop(s, *neural);
    SweepRow row;
    row.deviation = d;
    row.ban_error = control_error(s, rb, ref);
    row.neural_error = control_error(s, rn, ref);
    row.ban_min_h = rb.min_h;
    row.neural_min_h = rn.min_h;
    row.ban_goal = rb.goal_reached;
    row.neural_goal = rn.goal_reached;
    rows.push_back(row);
  }
  return rows;
}

Artifacts train_artifacts(const Scenario& sc, PipelineLog* log) {
  const OcpSpec expert = sc.expert_ocp();
  LabelOptions labels;
  labels.sensitivity = true;
  labels.workers = sc.training.sampler.workers;
  SamplerConfig sampler = sc.training.sampler;
  sampler.seed = sc.seed;
  ExpertData data = generate_expert_dataset(sampler, expert, labels);

  DaggerConfig dagger = sc.training.dagger;
  dagger.label_sensitivities = true;
  dagger.labels = labels;
  DaggerResult result = vf_dagger(data, expert, expert.with_horizon(sc.short_horizon), sc.start_box, dagger);

  Artifacts a;
  a.value = std::make_shared<const MlpNetwork>(result.value);
  a.sensitivity = std::make_shared<const MlpNetwork>(train_sensitivity(result.aggregated, sc.training.sensitivity_net));
  a.policy = std::make_shared<const MlpNetwork>(train_ampc(data, sc.training.policy_net));
  if (log) {
    log->expert = std::move(data);
    log->dagger = std::move(result);
  }
  return a;
}

void write_trajectory_csv(std::ostream& out, const RunReport& rep) {
  if (rep.rows.empty()) return;
  const Index nx = rep.rows.front().x.size();
  const Index nu = rep.rows.front().u.size();
  out << "# banmpc-trajectory 1\n";
  out << 't';
  for (Index i = 0; i < nx; ++i) out << ",x" << i;
  for (Index i = 0; i < nu; ++i) out << ",u" << i;
  out << ",H,solve_time_s,status\n";
  for (const RunStep& row : rep.rows) {
    out << fmt_double(row.t);
    for (Index i = 0; i < nx; ++i) out << ',' << fmt_double(row.x(i));
    for (Index i = 0; i < nu; ++i) out << ',' << fmt_double(row.u(i));
    out << ',' << fmt_double(row.h) << ',' << fmt_double(row.solve_time) << ','
        << (row.status ? to_string(*row.status) : "final") << '\n';
  }
}

void write_report(std::ostream& out, const RunReport& rep, double dt) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "format" << YAML::Value << "banmpc-report 1";
  e << YAML::Key << "scenario" << YAML::Value << rep.scenario;
  e << YAML::Key << "controller" << YAML::Value << rep.controller;
  e << YAML::Key << "steps" << YAML::Value << rep.steps();
  e << YAML::Key << "goal_reached" << YAML::Value << rep.goal_reached;
  e << YAML::Key << "failed" << YAML::Value << rep.failed;
  e << YAML::Key << "safe" << YAML::Value << rep.safe;
  e << YAML::Key << "closed_loop_cost" << YAML::Value << fmt_double(rep.cost);
  e << YAML::Key << "min_h" << YAML::Value << fmt_double(rep.min_h);
  e << YAML::Key << "mean_solve_time_s" << YAML::Value << fmt_double(rep.mean_solve_time);
  e << YAML::Key << "median_solve_time_s" << YAML::Value << fmt_double(rep.median_solve_time);
  e << YAML::Key << "utilization" << YAML::Value << fmt_double(rep.mean_solve_time / dt);
  e << YAML::Key << "degraded_steps" << YAML::Value << rep.degraded_steps;
  e << YAML::Key << "failed_steps" << YAML::Value << rep.failed_steps;
  e << YAML::EndMap;
  out << e.c_str() << '\n';
}

}  // namespace banmpc
