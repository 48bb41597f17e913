#pragma once

// Offline pipeline: expert labels from the long-horizon barrier MPC, VF-DAGGER
// for the terminal value network, neural sensitivities dV/dtheta and the
// behavioral-cloning AMPC baseline.

#include "banmpc/controllers.hpp"
#include "banmpc/valuenet.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace banmpc {

struct SamplerConfig {
  Bounds box;  // state box for initial states
  Index n_samples = 1;
  std::uint64_t seed = 0;
  /// Share of samples visited by expert closed-loop runs from random starts.
  double trajectory_fraction = 0.3;
  int trajectory_steps = 50;
  /// Parallel expert solves; results are merged in sample order.
  int workers = 1;

  void validate(const OcpSpec& spec) const;
};

/// Uniform state from the box with composite H(x) >= 0 at t = 0, by rejection.
/// Quaternion blocks are renormalized.
StateVector sample_safe_state(const Bounds& box, const OcpSpec& spec, std::mt19937_64& rng);

/// Labelled samples stored one per column.
struct ExpertData {
  std::string system;
  Vector theta_nom;
  std::uint64_t seed = 0;
  Matrix states;         // n_x x n
  Matrix inputs;         // n_u x n, first optimal input
  Vector values;         // V_MPC(x)
  Matrix sensitivities;  // q x n, or 0 x n without sensitivity labels
  Index attempted = 0;
  Index dropped = 0;

  Index count() const { return states.cols(); }
  bool has_sensitivities() const { return sensitivities.rows() > 0; }
  TrainingSet value_set() const;
  TrainingSet policy_set() const;
  TrainingSet sensitivity_set() const;
  /// Appends the records of other; counters are summed.
  void append(const ExpertData& other);
  ExpertData select(const std::vector<Index>& columns) const;
  void validate() const;
  bool operator==(const ExpertData& other) const;
};

class TooManyFailures : public std::runtime_error {
 public:
  TooManyFailures(Index attempted, Index dropped);
  Index attempted() const { return attempted_; }
  Index dropped() const { return dropped_; }

 private:
  Index attempted_, dropped_;
};

struct LabelOptions {
  bool sensitivity = false;
  SolverOptions solver;
  /// Labels whose generating solve has a larger KKT residual are dropped.
  double max_residual = 1e-6;
  int workers = 1;
};

/// Cold expert solves at t = 0. Failed solves, and for sensitivity labels
/// singular or weakly active KKT points, are dropped and counted.
ExpertData label_states(const std::vector<StateVector>& states, const OcpSpec& expert,
                        const LabelOptions& opts);

/// Box samples plus states along expert closed-loop runs. Throws
/// TooManyFailures when more than a fifth of the solves fail.
ExpertData generate_expert_dataset(const SamplerConfig& sampler, const OcpSpec& expert,
                                   const LabelOptions& opts = {});
/// The same sample stream with sensitivity labels at the nominal parameters.
ExpertData generate_sensitivity_dataset(const SamplerConfig& sampler, const OcpSpec& expert,
                                        LabelOptions opts = {});

/// Largest relative error between stored dV/dtheta labels and central
/// differences of re-solved values, over a random subset of the records.
double audit_sensitivities(const ExpertData& data, const OcpSpec& expert, double fraction,
                           std::uint64_t seed, double step = 1e-5);

struct NetworkConfig {
  std::vector<Index> hidden{32, 32, 32};
  TrainOptions train{.epochs = 300, .batch = 64, .learning_rate = 1e-2, .final_learning_rate = 3e-4};
};

/// Fresh network fitted to the set.
MlpNetwork fit_network(const TrainingSet& data, const NetworkConfig& cfg,
                       TrainHistory* history = nullptr);

struct DaggerConfig {
  int iterations = 5;    // n_D
  int steps = 50;        // T, rollout length
  int trajectories = 10;  // l, rollouts per iteration
  /// Mixing weights beta_i; empty means beta_i = 0.5^i.
  std::vector<double> beta;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  NetworkConfig network;
  /// Epochs for each retraining, warm-started from the previous fit.
  int retrain_epochs = 100;
  /// Also label rollout states with sensitivities.
  bool label_sensitivities = false;
  LabelOptions labels;

  double beta_at(int i) const;
  void validate() const;
};

struct DaggerIteration {
  Index dataset_size = 0;  // |D| after aggregation
  Index added = 0;
  Index dropped = 0;
  double beta = 0.0;
  /// Loss of the policy's terminal V_i on its own rollout states, measured
  /// before they are aggregated.
  double rollout_mse = 0.0;
  double validation_loss = 0.0;  // of V_{i+1}
};

struct DaggerResult {
  MlpNetwork value;    // validation-best iterate
  MlpNetwork initial;  // V*
  int best_iterate = 1;  // 1-based index into V_1..V_{n_D+1}
  std::vector<double> validation_losses;
  std::vector<DaggerIteration> iterations;
  ExpertData aggregated;  // training part of D after the last iteration
  ExpertData validation;
};

/// VF-DAGGER: V_1 = V* fitted to the expert data; each iteration rolls out
/// the short-horizon controller with terminal V_i from random starts, labels
/// the visited states with the expert, aggregates, retrains and mixes
/// V_{i+1} = beta_i V* + (1 - beta_i) V_hat_{i+1}.
DaggerResult vf_dagger(const ExpertData& expert_data, const OcpSpec& expert_spec,
                       const OcpSpec& short_spec, const Bounds& start_box,
                       const DaggerConfig& cfg);

MlpNetwork train_sensitivity(const ExpertData& data, const NetworkConfig& cfg,
                             TrainHistory* history = nullptr);
/// Behavioral cloning of the expert's first input.
MlpNetwork train_ampc(const ExpertData& data, const NetworkConfig& cfg,
                      TrainHistory* history = nullptr);

/// V_NN(x) + S_NN(x) (theta - theta_nom).
double adaptive_value(const MlpNetwork& value, const MlpNetwork& sensitivity, const Vector& x,
                      const Vector& theta, const Vector& theta_nom);

void write_dataset(std::ostream& out, const ExpertData& data);
ExpertData read_dataset(std::istream& in);
void save_dataset(const std::string& path, const ExpertData& data);
ExpertData load_dataset(const std::string& path);

}  // namespace banmpc
