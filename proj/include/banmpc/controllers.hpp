#pragma once

// Multiple-shooting optimal control problems with discrete barrier constraints
// and the receding-horizon controllers built on them.

#include "banmpc/dynamics.hpp"
#include "banmpc/parnlp.hpp"
#include "banmpc/safety.hpp"
#include "banmpc/valuenet.hpp"

#include <memory>
#include <optional>
#include <string>

namespace banmpc {

/// Per-dimension box; infinite entries mean unbounded.
struct Bounds {
  Vector lower;
  Vector upper;

  static Bounds unbounded(Index n);
  Index size() const { return lower.size(); }
  bool contains(const Vector& v, double tol = 0.0) const;
  Vector clamp(const Vector& v) const;
  void validate(Index n, const std::string& what) const;
};

struct OcpSpec {
  int horizon = 30;
  DiscreteDynamics dynamics;
  Vector q;  // state-cost diagonal
  Vector r;  // input-cost diagonal
  StateVector goal;
  Bounds state_bounds;
  Bounds input_bounds;
  SafetySpec safety;

  double dt() const { return dynamics.dt(); }
  const ModelParams& theta() const { return dynamics.params(); }
  /// Copy with a different horizon.
  OcpSpec with_horizon(int n) const;
  void validate() const;
};

/// w = (x_1..x_N, u_0..u_{N-1}). Constraints are grouped by stage k = 0..N-1:
/// the defect x_{k+1} - f(x_k, u_k, theta) = 0, then inequalities g <= 0 in the
/// order finite input bounds of u_k, finite state bounds of x_{k+1}, and one
/// composite barrier condition between x_k and x_{k+1} when obstacles exist.
///
/// J = sum_{k<N} |E(x_k - goal)|_Q^2 + |u_k - u_rest(theta)|_R^2 + terminal,
/// where the terminal is V(x_N) when a value function is given and
/// |E(x_N - goal)|_Q^2 otherwise. theta is the model parameter vector.
class OcpProblem final : public NlpProblem {
 public:
  OcpProblem(OcpSpec spec, StateVector x0, ValueHandle terminal, double t0);

  Index num_variables() const override;
  Index num_parameters() const override;
  Index num_equalities() const override;
  Index num_inequalities() const override;

  NlpValues values(const Vector& w, const Vector& theta) const override;
  NlpFirstOrder first_order(const Vector& w, const Vector& theta) const override;
  SparseMatrix lagrangian_hessian(const Vector& w, const Vector& theta, const Vector& lambda,
                                  const Vector& mu) const override;
  NlpParameterDerivatives parameter_derivatives(const Vector& w, const Vector& theta,
                                                const Vector& lambda,
                                                const Vector& mu) const override;
  std::optional<StageHint> stage_hint() const override;

  const OcpSpec& spec() const { return spec_; }
  const StateVector& initial_state() const { return x0_; }
  const StateVector& goal() const { return goal_; }
  int horizon() const { return spec_.horizon; }
  Index inequalities_per_stage() const { return per_stage_; }

  Index state_offset(int k) const;  // x_k for k = 1..N
  Index input_offset(int k) const;  // u_k for k = 0..N-1
  StateVector state(const Vector& w, int k) const;  // k = 0 returns x0
  InputVector input(const Vector& w, int k) const;

  /// Rollout of the inputs from x0 packed as a decision vector.
  Vector pack_rollout(const Matrix& inputs) const;
  Vector pack(const Matrix& states, const Matrix& inputs) const;

 private:
  struct StageData;
  enum class Detail { kValues, kFirstOrder, kBarrierCurvature };
  std::vector<StageData> stages(const Vector& w, const Vector& theta, Detail detail) const;
  NlpValues assemble_values(const Vector& w, const Vector& theta,
                            const std::vector<StageData>& sd) const;
  double state_cost(const Vector& x) const;

  OcpSpec spec_;
  StateVector x0_;
  StateVector goal_;
  ValueHandle terminal_;
  double t0_;
  Matrix state_weight_;  // E' Q E
  Matrix rest_jacobian_;
  struct BoundRow {
    Index dim;
    double sign;  // g = sign * (v - bound)
    double bound;
  };
  std::vector<BoundRow> input_rows_, state_rows_;
  bool barrier_ = false;
  Index per_stage_ = 0;
};

/// Fixed-horizon problem with an optional terminal value function.
std::unique_ptr<OcpProblem> build_ocp(const OcpSpec& spec, const StateVector& x0,
                                      ValueHandle terminal = nullptr, double t0 = 0.0);

enum class ControlStatus { kConverged, kDegraded, kFailed };

std::string to_string(ControlStatus status);

struct ControlResult {
  InputVector u0;
  Matrix predicted_states;  // (N+1) x n_x
  Matrix predicted_inputs;  // N x n_u
  double objective_value = 0.0;
  double solve_time = 0.0;
  int iterations = 0;
  ControlStatus status = ControlStatus::kFailed;
  std::optional<KktPoint> kkt_point;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual ControlResult control(const StateVector& x, double t) = 0;
  /// Forgets warm-start and fallback state.
  virtual void reset() {}
  virtual std::string name() const = 0;
};

struct MpcOptions {
  SolverOptions solver;
  bool warm_start = true;
};

/// Receding-horizon controller on OcpProblem. Warm-starts from the previous
/// solution shifted by one stage. When the solver fails it applies
/// u_rest + 0.5 (u_last - u_rest) and reports the step degraded.
class MpcController : public Controller {
 public:
  MpcController(OcpSpec spec, ValueHandle terminal, std::string name, MpcOptions opts = {});

  ControlResult control(const StateVector& x, double t) override;
  void reset() override;
  std::string name() const override { return name_; }

  const OcpSpec& spec() const { return spec_; }
  const ValueHandle& terminal() const { return terminal_; }
  void set_terminal(ValueHandle terminal) { terminal_ = std::move(terminal); }

 private:
  InitialGuess initial_guess(const OcpProblem& ocp) const;

  OcpSpec spec_;
  ValueHandle terminal_;
  std::string name_;
  MpcOptions opts_;
  std::optional<KktPoint> last_;
  std::optional<InputVector> last_input_;
};

/// Full-horizon barrier MPC without terminal value.
std::unique_ptr<MpcController> cbf_mpc(const OcpSpec& spec, MpcOptions opts = {});
/// The same problem with horizon m and no terminal value.
std::unique_ptr<MpcController> short_horizon_mpc(const OcpSpec& spec, int m, MpcOptions opts = {});
/// Horizon m with a learned terminal value V_NN(x).
std::unique_ptr<MpcController> neural_mpc(const OcpSpec& spec, int m,
                                          std::shared_ptr<const MlpNetwork> value,
                                          MpcOptions opts = {});
/// Horizon m with the terminal V_NN(x) + S_NN(x)(theta - theta_nom), where
/// theta is the planning parameter of spec.
std::unique_ptr<MpcController> ban_mpc(const OcpSpec& spec, int m,
                                       std::shared_ptr<const MlpNetwork> value,
                                       std::shared_ptr<const MlpNetwork> sensitivity,
                                       MpcOptions opts = {});

/// Network output clamped to the input bounds.
InputVector ampc_policy(const MlpNetwork& net, const Bounds& input_bounds, const StateVector& x);

class AmpcController final : public Controller {
 public:
  AmpcController(std::shared_ptr<const MlpNetwork> net, Bounds input_bounds);
  ControlResult control(const StateVector& x, double t) override;
  std::string name() const override { return "ampc"; }

 private:
  std::shared_ptr<const MlpNetwork> net_;
  Bounds bounds_;
};

}  // namespace banmpc
