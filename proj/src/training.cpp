#include "banmpc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace banmpc {

namespace {

bool is_quadrotor(const OcpSpec& spec) {
  return std::holds_alternative<Quadrotor>(spec.dynamics.model());
}

// Columns in one matrix per field, stacked from a list of records.
struct Record {
  StateVector x;
  InputVector u;
  double value = 0.0;
  Vector sens;
};

ExpertData empty_like(const OcpSpec& spec, bool sensitivity) {
  ExpertData d;
  d.system = spec.dynamics.system_name();
  d.theta_nom = spec.theta().theta_nom;
  d.states.resize(spec.dynamics.state_dim(), 0);
  d.inputs.resize(spec.dynamics.input_dim(), 0);
  d.values.resize(0);
  d.sensitivities.resize(sensitivity ? spec.dynamics.param_dim() : 0, 0);
  return d;
}

ExpertData stack(const OcpSpec& spec, bool sensitivity, const std::vector<std::optional<Record>>& records) {
  ExpertData d = empty_like(spec, sensitivity);
  const auto n = static_cast<Index>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return r.has_value(); }));
  d.states.resize(d.states.rows(), n);
  d.inputs.resize(d.inputs.rows(), n);
  d.values.resize(n);
  d.sensitivities.resize(d.sensitivities.rows(), n);
  Index c = 0;
  for (const auto& r : records) {
    if (!r) continue;
    d.states.col(c) = r->x;
    d.inputs.col(c) = r->u;
    d.values(c) = r->value;
    if (sensitivity) d.sensitivities.col(c) = r->sens;
    ++c;
  }
  d.attempted = static_cast<Index>(records.size());
  d.dropped = d.attempted - n;
  return d;
}

// Turns a converged expert solve at x into a record, or nothing when the
// point fails verification.
std::optional<Record> make_record(const OcpSpec& expert, const StateVector& x, const ControlResult& res,
                                  const LabelOptions& opts) {
  if (res.status != ControlStatus::kConverged || !res.kkt_point) return std::nullopt;
  const auto ocp = build_ocp(expert, x);
  if (!(kkt_residual(*ocp, *res.kkt_point) <= opts.max_residual)) return std::nullopt;
  Record r{x, res.u0, res.objective_value, Vector()};
  if (opts.sensitivity) {
    try {
      r.sens = solution_sensitivity(*ocp, *res.kkt_point, opts.solver.tol_act).dV_dtheta;
    } catch (const SensitivityError&) {
      return std::nullopt;
    }
    if (!r.sens.allFinite()) return std::nullopt;
  }
  return r;
}

MpcOptions cold_options(const LabelOptions& opts) {
  MpcOptions m;
  m.solver = opts.solver;
  m.warm_start = false;
  return m;
}

// Runs fn(i) for i in [0, n) over a few threads; fn writes only slot i.
template <typename Fn>
void parallel_for(Index n, int workers, const Fn& fn) {
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (w == 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (Index i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_failures(const ExpertData& d) {
  if (5 * d.dropped > d.attempted) throw TooManyFailures(d.attempted, d.dropped);
}

TrainingSet columns(const Matrix& inputs, const Matrix& targets) { return {inputs, targets}; }

}  // namespace

void SamplerConfig::validate(const OcpSpec& spec) const {
  const Index nx = spec.dynamics.state_dim();
  box.validate(nx, "sampler box");
  if (n_samples < 1) throw std::invalid_argument("sampler: n_samples must be at least 1");
  if (!(trajectory_fraction >= 0.0 && trajectory_fraction <= 1.0)) {
    throw std::invalid_argument("sampler: trajectory fraction must lie in [0, 1]");
  }
  if (trajectory_steps < 1) throw std::invalid_argument("sampler: trajectory steps must be positive");
  if (!box.lower.allFinite() || !box.upper.allFinite()) {
    throw std::invalid_argument("sampler: box must be finite");
  }
  if ((box.lower.array() < spec.state_bounds.lower.array()).any() ||
      (box.upper.array() > spec.state_bounds.upper.array()).any()) {
    throw std::invalid_argument("sampler: box exceeds the state bounds");
  }
}

StateVector sample_safe_state(const Bounds& box, const OcpSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool quad = is_quadrotor(spec);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    StateVector x(box.size());
    for (Index i = 0; i < x.size(); ++i) {
      x(i) = box.lower(i) + unit(rng) * (box.upper(i) - box.lower(i));
    }
    if (quad) x.segment<4>(3).normalize();
    if (safety_value(spec.dynamics, x, spec.safety, 0.0) >= 0.0) return x;
  }
  throw std::runtime_error("sampler: no safe state found in the box");
}

TrainingSet ExpertData::value_set() const { return columns(states, values.transpose()); }
TrainingSet ExpertData::policy_set() const { return columns(states, inputs); }
TrainingSet ExpertData::sensitivity_set() const {
  if (!has_sensitivities()) throw std::invalid_argument("dataset has no sensitivity labels");
  return columns(states, sensitivities);
}

void ExpertData::append(const ExpertData& other) {
  if (other.states.rows() != states.rows() || other.inputs.rows() != inputs.rows() ||
      other.sensitivities.rows() != sensitivities.rows()) {
    throw DimensionError("appended dataset has different record layout");
  }
  const Index n = count();
  const Index m = other.count();
  states.conservativeResize(Eigen::NoChange, n + m);
  inputs.conservativeResize(Eigen::NoChange, n + m);
  sensitivities.conservativeResize(Eigen::NoChange, n + m);
  values.conservativeResize(n + m);
  states.rightCols(m) = other.states;
  inputs.rightCols(m) = other.inputs;
  sensitivities.rightCols(m) = other.sensitivities;
  values.tail(m) = other.values;
  attempted += other.attempted;
  dropped += other.dropped;
}

ExpertData ExpertData::select(const std::vector<Index>& cols) const {
  ExpertData d = *this;
  const auto m = static_cast<Index>(cols.size());
  d.states.resize(states.rows(), m);
  d.inputs.resize(inputs.rows(), m);
  d.sensitivities.resize(sensitivities.rows(), m);
  d.values.resize(m);
  for (Index j = 0; j < m; ++j) {
    const Index c = cols[static_cast<std::size_t>(j)];
    d.states.col(j) = states.col(c);
    d.inputs.col(j) = inputs.col(c);
    d.sensitivities.col(j) = sensitivities.col(c);
    d.values(j) = values(c);
  }
  d.attempted = m;
  d.dropped = 0;
  return d;
}

void ExpertData::validate() const {
  const Index n = count();
  if (inputs.cols() != n || values.size() != n || sensitivities.cols() != n) {
    throw DimensionError("dataset columns disagree in count");
  }
  if (theta_nom.size() == 0) throw std::invalid_argument("dataset without nominal parameters");
  if (has_sensitivities()) require_dim(sensitivities.rows(), theta_nom.size(), "sensitivity labels");
  if (attempted < n || dropped < 0) throw std::invalid_argument("dataset counters are inconsistent");
}

bool ExpertData::operator==(const ExpertData& o) const {
  return system == o.system && seed == o.seed && attempted == o.attempted && dropped == o.dropped &&
         theta_nom.size() == o.theta_nom.size() && theta_nom == o.theta_nom &&
         states.rows() == o.states.rows() && states.cols() == o.states.cols() && states == o.states &&
         inputs.rows() == o.inputs.rows() && inputs == o.inputs && values.size() == o.values.size() &&
         values == o.values && sensitivities.rows() == o.sensitivities.rows() &&
         sensitivities.cols() == o.sensitivities.cols() && sensitivities == o.sensitivities;
}

TooManyFailures::TooManyFailures(Index attempted, Index dropped)
    : std::runtime_error("too many failed expert solves: " + std::to_string(dropped) + " of " +
                         std::to_string(attempted)),
      attempted_(attempted),
      dropped_(dropped) {}

ExpertData label_states(const std::vector<StateVector>& states, const OcpSpec& expert,
                        const LabelOptions& opts) {
  expert.validate();
  std::vector<std::optional<Record>> records(states.size());
  parallel_for(static_cast<Index>(states.size()), opts.workers, [&](Index i) {
    const auto idx = static_cast<std::size_t>(i);
    require_dim(states[idx].size(), expert.dynamics.state_dim(), "labelled state");
    auto ctrl = cbf_mpc(expert, cold_options(opts));
    records[idx] = make_record(expert, states[idx], ctrl->control(states[idx], 0.0), opts);
  });
  return stack(expert, opts.sensitivity, records);
}

ExpertData generate_expert_dataset(const SamplerConfig& sampler, const OcpSpec& expert,
                                   const LabelOptions& opts) {
  expert.validate();
  sampler.validate(expert);
  std::mt19937_64 rng(sampler.seed);
  const auto n_traj = static_cast<Index>(
      std::llround(sampler.trajectory_fraction * static_cast<double>(sampler.n_samples)));
  const Index n_box = sampler.n_samples - n_traj;

  std::vector<StateVector> box_states;
  box_states.reserve(static_cast<std::size_t>(n_box));
  for (Index i = 0; i < n_box; ++i) box_states.push_back(sample_safe_state(sampler.box, expert, rng));
  std::vector<StateVector> starts;
  const Index n_runs = (n_traj + sampler.trajectory_steps - 1) / sampler.trajectory_steps;
  for (Index i = 0; i < n_runs; ++i) starts.push_back(sample_safe_state(sampler.box, expert, rng));

  ExpertData data = label_states(box_states, expert, opts);

  // Each expert run labels the states it visits with its own warm-started solves.
  std::vector<std::vector<std::optional<Record>>> runs(starts.size());
  parallel_for(n_runs, sampler.workers, [&](Index r) {
    const auto ri = static_cast<std::size_t>(r);
    MpcOptions mo;
    mo.solver = opts.solver;
    auto ctrl = cbf_mpc(expert, mo);
    const Index len = std::min<Index>(sampler.trajectory_steps, n_traj - r * sampler.trajectory_steps);
    StateVector x = starts[ri];
    for (Index k = 0; k < len; ++k) {
      // Each visited state is labelled as an initial state at t = 0.
      const ControlResult res = ctrl->control(x, 0.0);
      runs[ri].push_back(make_record(expert, x, res, opts));
      x = rk4_step(expert.dynamics, x, res.u0);
      expert.dynamics.canonicalize(x);
    }
  });
  for (const auto& run : runs) data.append(stack(expert, opts.sensitivity, run));
  data.seed = sampler.seed;
  check_failures(data);
  return data;
}

ExpertData generate_sensitivity_dataset(const SamplerConfig& sampler, const OcpSpec& expert,
                                        LabelOptions opts) {
  opts.sensitivity = true;
  return generate_expert_dataset(sampler, expert, opts);
}

double audit_sensitivities(const ExpertData& data, const OcpSpec& expert, double fraction,
                           std::uint64_t seed, double step) {
  if (!data.has_sensitivities()) throw std::invalid_argument("dataset has no sensitivity labels");
  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(data.count()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(order.size()))));
  order.resize(std::min(n, order.size()));

  const Vector theta0 = expert.theta().theta;
  double worst = 0.0;
  for (Index c : order) {
    const StateVector x = data.states.col(c);
    Vector fd(theta0.size());
    for (Index j = 0; j < theta0.size(); ++j) {
      double v[2];
      for (int s = 0; s < 2; ++s) {
        Vector th = theta0;
        th(j) += (s == 0 ? step : -step) * std::max(1.0, std::abs(theta0(j)));
        OcpSpec perturbed = expert;
        perturbed.dynamics.set_params({th, expert.theta().theta_nom});
        MpcOptions mo;
        mo.warm_start = false;
        mo.solver.tol = 1e-10;
        const ControlResult r = cbf_mpc(perturbed, mo)->control(x, 0.0);
        if (r.status != ControlStatus::kConverged) {
          throw std::runtime_error("sensitivity audit: re-solve failed");
        }
        v[s] = r.objective_value;
      }
      fd(j) = (v[0] - v[1]) / (2.0 * step * std::max(1.0, std::abs(theta0(j))));
    }
    const Vector label = data.sensitivities.col(c);
    worst = std::max(worst, (label - fd).norm() / std::max(1e-3, fd.norm()));
  }
  return worst;
}

MlpNetwork fit_network(const TrainingSet& data, const NetworkConfig& cfg, TrainHistory* history) {
  std::vector<Index> dims{data.inputs.rows()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(data.targets.rows());
  MlpNetwork net = MlpNetwork::initialized(dims, cfg.train.seed);
  TrainOptions opts = cfg.train;
  opts.fit_normalizers = true;
  TrainHistory h = train(net, data, opts);
  if (history) *history = std::move(h);
  return net;
}

double DaggerConfig::beta_at(int i) const {
  if (beta.empty()) return std::pow(0.5, i);
  return beta.at(static_cast<std::size_t>(i - 1));
}

void DaggerConfig::validate() const {
  if (iterations < 1 || steps < 1 || trajectories < 1) {
    throw std::invalid_argument("dagger: iterations, steps and trajectories must be positive");
  }
  if (!beta.empty() && static_cast<int>(beta.size()) != iterations) {
    throw std::invalid_argument("dagger: one mixing weight per iteration required");
  }
  for (double b : beta) {
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("dagger: mixing weights must lie in [0, 1]");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("dagger: validation fraction must lie in (0, 1)");
  }
  if (retrain_epochs < 1) throw std::invalid_argument("dagger: retrain epochs must be positive");
}

DaggerResult vf_dagger(const ExpertData& expert_data, const OcpSpec& expert_spec,
                       const OcpSpec& short_spec, const Bounds& start_box, const DaggerConfig& cfg) {
  cfg.validate();
  expert_spec.validate();
  short_spec.validate();
  if (expert_data.count() < 2) throw std::invalid_argument("dagger: expert dataset is empty");
  if (cfg.label_sensitivities && !expert_data.has_sensitivities()) {
    throw std::invalid_argument("dagger: sensitivity aggregation needs labelled expert data");
  }
  start_box.validate(expert_spec.dynamics.state_dim(), "dagger start box");

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(expert_data.count()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(order.size())));
  std::vector<Index> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Index> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  DaggerResult out;
  out.validation = expert_data.select(val_idx);
  out.aggregated = expert_data.select(train_idx);
  const TrainingSet val_set = out.validation.value_set();

  // Line 3: V_1 = V*.
  out.initial = fit_network(out.aggregated.value_set(), cfg.network);
  MlpNetwork v_hat = out.initial;
  MlpNetwork current = out.initial;
  out.value = current;
  out.validation_losses.push_back(mse(current, val_set));
  double best = out.validation_losses.back();

  LabelOptions labels = cfg.labels;
  labels.sensitivity = cfg.label_sensitivities;
  for (int i = 1; i <= cfg.iterations; ++i) {
    // Lines 5-6: roll out pi_i, the short-horizon controller with terminal V_i.
    auto policy = std::make_shared<const MlpNetwork>(current);
    std::vector<StateVector> visited;
    for (int r = 0; r < cfg.trajectories; ++r) {
      auto ctrl = neural_mpc(short_spec, short_spec.horizon, policy);
      StateVector x = sample_safe_state(start_box, expert_spec, rng);
      for (int k = 0; k < cfg.steps; ++k) {
        visited.push_back(x);
        const ControlResult res = ctrl->control(x, 0.0);
        x = rk4_step(short_spec.dynamics, x, res.u0);
        expert_spec.dynamics.canonicalize(x);
      }
    }
    // Line 7: expert labels; line 8: aggregate.
    const ExpertData d_i = label_states(visited, expert_spec, labels);
    DaggerIteration it;
    it.added = d_i.count();
    it.dropped = d_i.dropped;
    it.rollout_mse = d_i.count() > 0 ? mse(current, d_i.value_set()) : 0.0;
    out.aggregated.append(d_i);
    it.dataset_size = out.aggregated.count();

    // Line 9: retrain on D, frozen normalizers; line 10: mix with V*.
    TrainOptions retrain = cfg.network.train;
    retrain.epochs = cfg.retrain_epochs;
    // Continue from the end of the initial schedule; restarting at the initial
    // rate knocks the warm start off and the checkpoint then keeps V_hat as is.
    retrain.learning_rate = retrain.final_learning_rate;
    retrain.fit_normalizers = false;
    retrain.seed = cfg.network.train.seed + static_cast<std::uint64_t>(i);
    train(v_hat, out.aggregated.value_set(), retrain);
    it.beta = cfg.beta_at(i);
    current = merge_networks(out.initial, v_hat, it.beta);

    // Lines 11-12: keep the validation-best iterate.
    it.validation_loss = mse(current, val_set);
    out.validation_losses.push_back(it.validation_loss);
    if (it.validation_loss < best) {
      best = it.validation_loss;
      out.value = current;
      out.best_iterate = i + 1;
    }
    out.iterations.push_back(it);
  }
  return out;
}

MlpNetwork train_sensitivity(const ExpertData& data, const NetworkConfig& cfg, TrainHistory* history) {
  return fit_network(data.sensitivity_set(), cfg, history);
}

MlpNetwork train_ampc(const ExpertData& data, const NetworkConfig& cfg, TrainHistory* history) {
  return fit_network(data.policy_set(), cfg, history);
}

double adaptive_value(const MlpNetwork& value, const MlpNetwork& sensitivity, const Vector& x,
                      const Vector& theta, const Vector& theta_nom) {
  require_dim(value.output_dim(), 1, "value network output");
  require_dim(sensitivity.output_dim(), theta.size(), "sensitivity network output");
  require_dim(theta_nom.size(), theta.size(), "nominal parameters");
  return value.forward(x)(0) + sensitivity.forward(x).dot(theta - theta_nom);
}

// Dataset file: '#' header lines, then one fixed-width record per line with
// the columns x, u, V and optionally dV/dtheta.
namespace {

constexpr const char* kDatasetMagic = "banmpc-dataset";
constexpr int kDatasetVersion = 1;

void put(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, " %+.16e", v);
  out << buf;
}

std::string header_value(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset file: missing header '" + key + "'");
  const std::string prefix = "# " + key + " ";
  if (line.rfind(prefix, 0) != 0) {
    throw std::runtime_error("dataset file: expected header '" + key + "', got '" + line + "'");
  }
  return line.substr(prefix.size());
}

Index parse_index(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size() || v < 0) throw std::runtime_error("dataset file: bad value for '" + key + "'");
  return static_cast<Index>(v);
}

}  // namespace

void write_dataset(std::ostream& out, const ExpertData& d) {
  d.validate();
  out << "# " << kDatasetMagic << ' ' << kDatasetVersion << '\n';
  out << "# system " << d.system << '\n';
  out << "# n_x " << d.states.rows() << '\n';
  out << "# n_u " << d.inputs.rows() << '\n';
  out << "# q " << d.theta_nom.size() << '\n';
  out << "# theta_nom";
  for (Index i = 0; i < d.theta_nom.size(); ++i) put(out, d.theta_nom(i));
  out << '\n';
  out << "# seed " << d.seed << '\n';
  out << "# sensitivity " << (d.has_sensitivities() ? 1 : 0) << '\n';
  out << "# attempted " << d.attempted << '\n';
  out << "# dropped " << d.dropped << '\n';
  out << "# records " << d.count() << '\n';
  for (Index c = 0; c < d.count(); ++c) {
    for (Index i = 0; i < d.states.rows(); ++i) put(out, d.states(i, c));
    for (Index i = 0; i < d.inputs.rows(); ++i) put(out, d.inputs(i, c));
    put(out, d.values(c));
    for (Index i = 0; i < d.sensitivities.rows(); ++i) put(out, d.sensitivities(i, c));
    out << '\n';
  }
  if (!out) throw std::runtime_error("dataset file: write failed");
}

ExpertData read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      line != "# " + std::string(kDatasetMagic) + ' ' + std::to_string(kDatasetVersion)) {
    throw std::runtime_error("dataset file: bad magic or unsupported version");
  }
  ExpertData d;
  d.system = header_value(in, "system");
  const Index nx = parse_index(header_value(in, "n_x"), "n_x");
  const Index nu = parse_index(header_value(in, "n_u"), "n_u");
  const Index q = parse_index(header_value(in, "q"), "q");
  {
    std::istringstream ts(header_value(in, "theta_nom"));
    d.theta_nom.resize(q);
    for (Index i = 0; i < q; ++i) {
      std::string tok;
      if (!(ts >> tok)) throw std::runtime_error("dataset file: short theta_nom");
      d.theta_nom(i) = std::strtod(tok.c_str(), nullptr);
    }
  }
  d.seed = std::stoull(header_value(in, "seed"));
  const bool sens = parse_index(header_value(in, "sensitivity"), "sensitivity") != 0;
  d.attempted = parse_index(header_value(in, "attempted"), "attempted");
  d.dropped = parse_index(header_value(in, "dropped"), "dropped");
  const Index n = parse_index(header_value(in, "records"), "records");

  d.states.resize(nx, n);
  d.inputs.resize(nu, n);
  d.values.resize(n);
  d.sensitivities.resize(sens ? q : 0, n);
  const Index width = nx + nu + 1 + (sens ? q : 0);
  Vector row(width);
  for (Index c = 0; c < n; ++c) {
    if (!std::getline(in, line)) throw std::runtime_error("dataset file: truncated records");
    const char* p = line.c_str();
    for (Index i = 0; i < width; ++i) {
      char* end = nullptr;
      row(i) = std::strtod(p, &end);
      if (end == p) throw std::runtime_error("dataset file: malformed record " + std::to_string(c));
      p = end;
    }
    d.states.col(c) = row.head(nx);
    d.inputs.col(c) = row.segment(nx, nu);
    d.values(c) = row(nx + nu);
    if (sens) d.sensitivities.col(c) = row.tail(q);
  }
  d.validate();
  return d;
}

void save_dataset(const std::string& path, const ExpertData& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(out, data);
}

ExpertData load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_dataset(in);
}

}  // namespace banmpc
