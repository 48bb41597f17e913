#pragma once

// Continuous-time robot models and the fixed-step RK4 discretization shared by
// every controller and the closed-loop simulator.
//
// Each model is a stateless struct whose vector field is templated on the
// scalar type, so the same code is evaluated with doubles and with forward-mode
// autodiff scalars when controllers need Jacobians and Hessians of the step map.

#include "banmpc/types.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <variant>

namespace banmpc {

inline constexpr double kGravity = 9.81;

/// Physical parameters of a model and their nominal values.
struct ModelParams {
  Vector theta;
  Vector theta_nom;

  /// Parameters sitting exactly at their nominal values.
  static ModelParams nominal(const Vector& theta_nom) { return {theta_nom, theta_nom}; }

  /// theta_nom scaled componentwise by (1 + fraction).
  static ModelParams deviated(const Vector& theta_nom, double fraction) {
    return {theta_nom * (1.0 + fraction), theta_nom};
  }

  Vector deviation() const { return theta - theta_nom; }

  /// Throws std::invalid_argument unless both vectors have equal length and
  /// strictly positive entries.
  void validate() const;
};

/// Classical fourth-order Runge-Kutta step with the input held constant.
template <typename Field, typename StateT>
StateT rk4(const Field& field, const StateT& x, double dt) {
  using Scalar = typename StateT::Scalar;
  const Scalar h(dt);
  const Scalar half(0.5 * dt);
  const StateT k1 = field(x);
  const StateT k2 = field(StateT(x + half * k1));
  const StateT k3 = field(StateT(x + half * k2));
  const StateT k4 = field(StateT(x + h * k3));
  return x + Scalar(dt / 6.0) * (k1 + Scalar(2.0) * k2 + Scalar(2.0) * k3 + k4);
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  r -= kPi;
  return r == -kPi ? kPi : r;
}

/// Planar unicycle. State (x, y, psi), input (v, omega), parameters are gains
/// on the two input channels, nominally (1, 1).
struct Unicycle {
  static constexpr int kStateDim = 3;
  static constexpr int kInputDim = 2;
  static constexpr int kParamDim = 2;
  static constexpr int kPositionDim = 2;
  static constexpr const char* kName = "unicycle";

  template <typename Scalar>
  using State = Eigen::Matrix<Scalar, kStateDim, 1>;
  template <typename Scalar>
  using Input = Eigen::Matrix<Scalar, kInputDim, 1>;
  template <typename Scalar>
  using Params = Eigen::Matrix<Scalar, kParamDim, 1>;

  template <typename Scalar>
  static State<Scalar> rhs(const State<Scalar>& x, const Input<Scalar>& u,
                           const Params<Scalar>& theta) {
    using std::cos;
    using std::sin;
    State<Scalar> dx;
    const Scalar v = theta(0) * u(0);
    dx(0) = v * cos(x(2));
    dx(1) = v * sin(x(2));
    dx(2) = theta(1) * u(1);
    return dx;
  }

  template <typename Scalar>
  static void normalize(State<Scalar>& /*x*/) {}

  static void canonicalize(Eigen::Ref<Vector> x) { x(2) = wrap_angle(x(2)); }

  static Vector default_params() { return Vector::Ones(kParamDim); }
};

/// Rigid-body quadrotor with four independently commanded rotor thrusts.
///
/// State: p_WB (3), q_WB (4, w-first unit quaternion), v_WB (3), omega_B (3).
/// Parameters: mass, d_x, d_y, c_tau, J_x, J_y, J_z.
struct Quadrotor {
  static constexpr int kStateDim = 13;
  static constexpr int kInputDim = 4;
  static constexpr int kParamDim = 7;
  static constexpr int kPositionDim = 3;
  static constexpr const char* kName = "quadrotor";

  enum ParamIndex { kMass = 0, kArmX, kArmY, kDragMoment, kInertiaX, kInertiaY, kInertiaZ };

  template <typename Scalar>
  using State = Eigen::Matrix<Scalar, kStateDim, 1>;
  template <typename Scalar>
  using Input = Eigen::Matrix<Scalar, kInputDim, 1>;
  template <typename Scalar>
  using Params = Eigen::Matrix<Scalar, kParamDim, 1>;

  template <typename Scalar>
  static Eigen::Matrix<Scalar, 3, 1> body_torque(const Input<Scalar>& t, const Params<Scalar>& theta) {
    Eigen::Matrix<Scalar, 3, 1> tau;
    tau(0) = theta(kArmY) * (-t(0) - t(1) + t(2) + t(3));
    tau(1) = theta(kArmX) * (-t(0) + t(1) - t(2) + t(3));
    // Diagonal rotor pairs (0, 3) and (1, 2) spin in the same direction.
    tau(2) = theta(kDragMoment) * (-t(0) + t(1) + t(2) - t(3));
    return tau;
  }

  template <typename Scalar>
  static State<Scalar> rhs(const State<Scalar>& x, const Input<Scalar>& u,
                           const Params<Scalar>& theta) {
    const Scalar qw = x(3), qx = x(4), qy = x(5), qz = x(6);
    const Scalar wx = x(10), wy = x(11), wz = x(12);
    const Scalar half(0.5);
    const Scalar two(2.0);
    State<Scalar> dx;
    dx.template segment<3>(0) = x.template segment<3>(7);
    // q_dot = q (x) [0, omega / 2]
    dx(3) = half * (-qx * wx - qy * wy - qz * wz);
    dx(4) = half * (qw * wx + qy * wz - qz * wy);
    dx(5) = half * (qw * wy - qx * wz + qz * wx);
    dx(6) = half * (qw * wz + qx * wy - qy * wx);
    // Third column of R(q) times collective thrust, divided by mass.
    const Scalar accel = (u(0) + u(1) + u(2) + u(3)) / theta(kMass);
    dx(7) = two * (qw * qy + qx * qz) * accel;
    dx(8) = two * (qy * qz - qw * qx) * accel;
    dx(9) = (Scalar(1.0) - two * (qx * qx + qy * qy)) * accel - Scalar(kGravity);
    const Eigen::Matrix<Scalar, 3, 1> tau = body_torque<Scalar>(u, theta);
    const Scalar jx = theta(kInertiaX), jy = theta(kInertiaY), jz = theta(kInertiaZ);
    // J^-1 (tau - omega x J omega)
    dx(10) = (tau(0) - (wy * jz * wz - wz * jy * wy)) / jx;
    dx(11) = (tau(1) - (wz * jx * wx - wx * jz * wz)) / jy;
    dx(12) = (tau(2) - (wx * jy * wy - wy * jx * wx)) / jz;
    return dx;
  }

  template <typename Scalar>
  static void normalize(State<Scalar>& x) {
    using std::sqrt;
    const Scalar n = sqrt(x(3) * x(3) + x(4) * x(4) + x(5) * x(5) + x(6) * x(6));
    x.template segment<4>(3) /= n;
  }

  static void canonicalize(Eigen::Ref<Vector> /*x*/) {}

  /// Mass 1 kg with a small symmetric airframe; not taken from any specific vehicle.
  static Vector default_params() {
    Vector p(kParamDim);
    p << 1.0, 0.15, 0.15, 0.016, 0.01, 0.01, 0.02;
    return p;
  }

  /// Thrust per rotor that balances gravity.
  static Vector hover_input(const Vector& theta) {
    return Vector::Constant(kInputDim, theta(kMass) * kGravity / 4.0);
  }
};

/// Planar double integrator: state (p_x, p_y, v_x, v_y), input acceleration
/// commands, single parameter scaling the input (an inverse mass).
struct DoubleIntegrator {
  static constexpr int kStateDim = 4;
  static constexpr int kInputDim = 2;
  static constexpr int kParamDim = 1;
  static constexpr int kPositionDim = 2;
  static constexpr const char* kName = "double_integrator";

  template <typename Scalar>
  using State = Eigen::Matrix<Scalar, kStateDim, 1>;
  template <typename Scalar>
  using Input = Eigen::Matrix<Scalar, kInputDim, 1>;
  template <typename Scalar>
  using Params = Eigen::Matrix<Scalar, kParamDim, 1>;

  template <typename Scalar>
  static State<Scalar> rhs(const State<Scalar>& x, const Input<Scalar>& u,
                           const Params<Scalar>& theta) {
    State<Scalar> dx;
    dx.template head<2>() = x.template tail<2>();
    dx.template tail<2>() = theta(0) * u;
    return dx;
  }

  template <typename Scalar>
  static void normalize(State<Scalar>& /*x*/) {}

  static void canonicalize(Eigen::Ref<Vector> /*x*/) {}

  static Vector default_params() { return Vector::Ones(kParamDim); }
};

using Model = std::variant<Unicycle, Quadrotor, DoubleIntegrator>;

/// Parses "unicycle", "quadrotor" or "double_integrator".
Model model_from_name(const std::string& name);
std::string model_name(const Model& model);

/// Smooth RK4 transition of a concrete model, before canonicalization.
template <typename M, typename Scalar>
typename M::template State<Scalar> transition(const typename M::template State<Scalar>& x,
                                              const typename M::template Input<Scalar>& u,
                                              const typename M::template Params<Scalar>& theta,
                                              double dt) {
  using StateT = typename M::template State<Scalar>;
  auto field = [&](const StateT& s) { return M::template rhs<Scalar>(s, u, theta); };
  StateT next = rk4(field, x, dt);
  M::template normalize<Scalar>(next);
  return next;
}

/// First-order data of the discrete transition at one stage.
struct StageLinearization {
  Vector next;       // f(x, u, theta)
  Matrix jac_state;  // df/dx  (n_x x n_x)
  Matrix jac_input;  // df/du  (n_x x n_u)
  Matrix jac_param;  // df/dtheta (n_x x q)
};

/// A model together with its integration step and parameters.
class DiscreteDynamics {
 public:
  DiscreteDynamics(Model model, double dt, ModelParams params);

  const Model& model() const { return model_; }
  double dt() const { return dt_; }
  const ModelParams& params() const { return params_; }
  void set_params(ModelParams params);

  Index state_dim() const;
  Index input_dim() const;
  Index param_dim() const;
  Index position_dim() const;
  std::string system_name() const { return model_name(model_); }

  /// Continuous-time vector field at the configured parameters.
  StateVector vector_field(const StateVector& x, const InputVector& u) const;
  StateVector vector_field(const StateVector& x, const InputVector& u, const Vector& theta) const;

  /// Smooth transition used inside optimal control problems (no angle wrapping).
  StateVector transition(const StateVector& x, const InputVector& u, const Vector& theta) const;

  StageLinearization linearize(const StateVector& x, const InputVector& u, const Vector& theta) const;

  /// Hessian of weights' * f(x, u, theta) with respect to (x, u).
  Matrix transition_hessian(const StateVector& x, const InputVector& u, const Vector& theta,
                            const Vector& weights) const;

  /// Hessian of weights' * f(x, u, theta) with respect to (x, u, theta).
  Matrix transition_hessian_with_params(const StateVector& x, const InputVector& u,
                                        const Vector& theta, const Vector& weights) const;

  /// Wraps angles and similar representation choices in place.
  void canonicalize(Eigen::Ref<Vector> x) const;

  /// a - b with angular components wrapped.
  Vector state_difference(const StateVector& a, const StateVector& b) const;

  /// Position block of a state.
  Vector position(const StateVector& x) const { return x.head(position_dim()); }

  /// Constant map E with cost error e(x) = E (x - goal).
  Matrix cost_error_map(const StateVector& goal) const;

  /// Goal rewritten so that angular components lie within pi of x0's.
  StateVector align_goal(const StateVector& goal, const StateVector& x0) const;

  /// Input that holds the model at rest (hover thrust for the quadrotor, zero otherwise).
  InputVector rest_input(const Vector& theta) const;
  /// d rest_input / d theta (n_u x q).
  Matrix rest_input_jacobian() const;

 private:
  Model model_;
  double dt_;
  ModelParams params_;
};

StateVector unicycle_rhs(const StateVector& x, const InputVector& u, const Vector& theta);
StateVector quadrotor_rhs(const StateVector& x, const InputVector& u, const Vector& theta);

/// Discrete step used by the simulator: RK4 with zero-order hold, quaternion
/// renormalization and heading wrap.
StateVector rk4_step(const DiscreteDynamics& dyn, const StateVector& x, const InputVector& u);
StateVector rk4_step(const DiscreteDynamics& dyn, const StateVector& x, const InputVector& u,
                     const Vector& theta);

}  // namespace banmpc
