#include "banmpc/dynamics.hpp"

#include "jet.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <stdexcept>

namespace banmpc {

void ModelParams::validate() const {
  if (theta.size() != theta_nom.size()) {
    throw std::invalid_argument("model parameters: theta and theta_nom differ in length");
  }
  if ((theta.array() <= 0.0).any() || (theta_nom.array() <= 0.0).any()) {
    throw std::invalid_argument("model parameters must be strictly positive");
  }
}

Model model_from_name(const std::string& name) {
  if (name == Unicycle::kName) return Unicycle{};
  if (name == Quadrotor::kName) return Quadrotor{};
  if (name == DoubleIntegrator::kName) return DoubleIntegrator{};
  throw std::invalid_argument("unknown system '" + name + "'");
}

std::string model_name(const Model& model) {
  return std::visit([](const auto& m) { return std::string(std::decay_t<decltype(m)>::kName); },
                    model);
}

namespace {

template <typename M>
typename M::template State<double> fixed_state(const Vector& x) {
  require_dim(x.size(), M::kStateDim, "state");
  return x;
}

template <typename M>
typename M::template Input<double> fixed_input(const Vector& u) {
  require_dim(u.size(), M::kInputDim, "input");
  return u;
}

template <typename M>
typename M::template Params<double> fixed_params(const Vector& theta) {
  require_dim(theta.size(), M::kParamDim, "model parameters");
  return theta;
}

template <typename M>
StageLinearization linearize_model(const Vector& x, const Vector& u, const Vector& theta,
                                   double dt) {
  constexpr int nx = M::kStateDim;
  constexpr int nu = M::kInputDim;
  constexpr int nq = M::kParamDim;
  constexpr int nz = nx + nu + nq;
  using Ad = Eigen::AutoDiffScalar<Eigen::Matrix<double, nz, 1>>;

  typename M::template State<Ad> xs;
  typename M::template Input<Ad> us;
  typename M::template Params<Ad> ps;
  for (int i = 0; i < nx; ++i) xs(i) = Ad(x(i), nz, i);
  for (int i = 0; i < nu; ++i) us(i) = Ad(u(i), nz, nx + i);
  for (int i = 0; i < nq; ++i) ps(i) = Ad(theta(i), nz, nx + nu + i);

  const auto next = transition<M, Ad>(xs, us, ps, dt);
  StageLinearization lin;
  lin.next.resize(nx);
  Eigen::Matrix<double, nx, nz> jac;
  for (int i = 0; i < nx; ++i) {
    lin.next(i) = next(i).value();
    jac.row(i) = next(i).derivatives().transpose();
  }
  lin.jac_state = jac.template leftCols<nx>();
  lin.jac_input = jac.template middleCols<nu>(nx);
  lin.jac_param = jac.template rightCols<nq>();
  return lin;
}

// Hessian of weights' * f with second-order jets over the first NZ entries of
// (x, u, theta); remaining entries are held constant.
template <typename M, int NZ>
Matrix weighted_hessian(const Vector& x, const Vector& u, const Vector& theta,
                        const Vector& weights, double dt) {
  constexpr int nx = M::kStateDim;
  constexpr int nu = M::kInputDim;
  using J = detail::Jet2<NZ>;
  require_dim(weights.size(), nx, "transition weights");

  auto seed = [&](double value, int index) { return index < NZ ? J::variable(value, index) : J(value); };
  typename M::template State<J> xs;
  typename M::template Input<J> us;
  typename M::template Params<J> ps;
  for (int i = 0; i < nx; ++i) xs(i) = seed(x(i), i);
  for (int i = 0; i < nu; ++i) us(i) = seed(u(i), nx + i);
  for (int i = 0; i < M::kParamDim; ++i) ps(i) = seed(theta(i), nx + nu + i);

  const auto next = transition<M, J>(xs, us, ps, dt);
  Eigen::Matrix<double, NZ, NZ> hess = Eigen::Matrix<double, NZ, NZ>::Zero();
  for (int i = 0; i < nx; ++i) {
    if (weights(i) != 0.0) hess += weights(i) * next(i).h;
  }
  return 0.5 * (hess + hess.transpose());
}

}  // namespace

DiscreteDynamics::DiscreteDynamics(Model model, double dt, ModelParams params)
    : model_(model), dt_(dt), params_(std::move(params)) {
  if (!(dt_ > 0.0)) throw std::invalid_argument("integration step must be positive");
  params_.validate();
  require_dim(params_.theta.size(), param_dim(), "model parameters");
}

void DiscreteDynamics::set_params(ModelParams params) {
  params.validate();
  require_dim(params.theta.size(), param_dim(), "model parameters");
  params_ = std::move(params);
}

Index DiscreteDynamics::state_dim() const {
  return std::visit([](const auto& m) -> Index { return std::decay_t<decltype(m)>::kStateDim; },
                    model_);
}

Index DiscreteDynamics::input_dim() const {
  return std::visit([](const auto& m) -> Index { return std::decay_t<decltype(m)>::kInputDim; },
                    model_);
}

Index DiscreteDynamics::param_dim() const {
  return std::visit([](const auto& m) -> Index { return std::decay_t<decltype(m)>::kParamDim; },
                    model_);
}

Index DiscreteDynamics::position_dim() const {
  return std::visit(
      [](const auto& m) -> Index { return std::decay_t<decltype(m)>::kPositionDim; }, model_);
}

StateVector DiscreteDynamics::vector_field(const StateVector& x, const InputVector& u) const {
  return vector_field(x, u, params_.theta);
}

StateVector DiscreteDynamics::vector_field(const StateVector& x, const InputVector& u,
                                           const Vector& theta) const {
  return std::visit(
      [&](const auto& m) -> StateVector {
        using M = std::decay_t<decltype(m)>;
        return M::template rhs<double>(fixed_state<M>(x), fixed_input<M>(u),
                                       fixed_params<M>(theta));
      },
      model_);
}

StateVector DiscreteDynamics::transition(const StateVector& x, const InputVector& u,
                                         const Vector& theta) const {
  return std::visit(
      [&](const auto& m) -> StateVector {
        using M = std::decay_t<decltype(m)>;
        return banmpc::transition<M, double>(fixed_state<M>(x), fixed_input<M>(u),
                                             fixed_params<M>(theta), dt_);
      },
      model_);
}

StageLinearization DiscreteDynamics::linearize(const StateVector& x, const InputVector& u,
                                               const Vector& theta) const {
  return std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        fixed_state<M>(x);
        fixed_input<M>(u);
        fixed_params<M>(theta);
        return linearize_model<M>(x, u, theta, dt_);
      },
      model_);
}

Matrix DiscreteDynamics::transition_hessian(const StateVector& x, const InputVector& u,
                                            const Vector& theta, const Vector& weights) const {
  return std::visit(
      [&](const auto& m) -> Matrix {
        using M = std::decay_t<decltype(m)>;
        fixed_state<M>(x);
        fixed_input<M>(u);
        fixed_params<M>(theta);
        return weighted_hessian<M, M::kStateDim + M::kInputDim>(x, u, theta, weights, dt_);
      },
      model_);
}

Matrix DiscreteDynamics::transition_hessian_with_params(const StateVector& x,
                                                        const InputVector& u,
                                                        const Vector& theta,
                                                        const Vector& weights) const {
  return std::visit(
      [&](const auto& m) -> Matrix {
        using M = std::decay_t<decltype(m)>;
        fixed_state<M>(x);
        fixed_input<M>(u);
        fixed_params<M>(theta);
        return weighted_hessian<M, M::kStateDim + M::kInputDim + M::kParamDim>(x, u, theta,
                                                                              weights, dt_);
      },
      model_);
}

void DiscreteDynamics::canonicalize(Eigen::Ref<Vector> x) const {
  std::visit([&](const auto& m) { std::decay_t<decltype(m)>::canonicalize(x); }, model_);
}

Vector DiscreteDynamics::state_difference(const StateVector& a, const StateVector& b) const {
  Vector d = a - b;
  if (std::holds_alternative<Unicycle>(model_)) d(2) = wrap_angle(d(2));
  return d;
}

Matrix DiscreteDynamics::cost_error_map(const StateVector& goal) const {
  const Index n = state_dim();
  require_dim(goal.size(), n, "goal");
  Matrix e = Matrix::Identity(n, n);
  if (std::holds_alternative<Quadrotor>(model_)) {
    // Vector part of conj(q_goal) (x) q, which is linear in q.
    const double w = goal(3), x = -goal(4), y = -goal(5), z = -goal(6);
    Eigen::Matrix4d left;
    left << w, -x, -y, -z,
            x, w, -z, y,
            y, z, w, -x,
            z, -y, x, w;
    e.block<4, 4>(3, 3) = left;
    e.row(3).setZero();
  }
  return e;
}

StateVector DiscreteDynamics::align_goal(const StateVector& goal, const StateVector& x0) const {
  StateVector g = goal;
  if (std::holds_alternative<Unicycle>(model_)) {
    g(2) = x0(2) + wrap_angle(goal(2) - x0(2));
  }
  return g;
}

InputVector DiscreteDynamics::rest_input(const Vector& theta) const {
  if (std::holds_alternative<Quadrotor>(model_)) return Quadrotor::hover_input(theta);
  return InputVector::Zero(input_dim());
}

Matrix DiscreteDynamics::rest_input_jacobian() const {
  Matrix j = Matrix::Zero(input_dim(), param_dim());
  if (std::holds_alternative<Quadrotor>(model_)) j.col(Quadrotor::kMass).setConstant(kGravity / 4.0);
  return j;
}

StateVector unicycle_rhs(const StateVector& x, const InputVector& u, const Vector& theta) {
  return Unicycle::rhs<double>(fixed_state<Unicycle>(x), fixed_input<Unicycle>(u),
                               fixed_params<Unicycle>(theta));
}

StateVector quadrotor_rhs(const StateVector& x, const InputVector& u, const Vector& theta) {
  return Quadrotor::rhs<double>(fixed_state<Quadrotor>(x), fixed_input<Quadrotor>(u),
                                fixed_params<Quadrotor>(theta));
}

StateVector rk4_step(const DiscreteDynamics& dyn, const StateVector& x, const InputVector& u) {
  return rk4_step(dyn, x, u, dyn.params().theta);
}

StateVector rk4_step(const DiscreteDynamics& dyn, const StateVector& x, const InputVector& u,
                     const Vector& theta) {
  StateVector next = dyn.transition(x, u, theta);
  dyn.canonicalize(next);
  return next;
}

}  // namespace banmpc
