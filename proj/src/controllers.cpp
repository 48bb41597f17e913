#include "banmpc/controllers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace banmpc {

Bounds Bounds::unbounded(Index n) {
  const double inf = std::numeric_limits<double>::infinity();
  return {Vector::Constant(n, -inf), Vector::Constant(n, inf)};
}

bool Bounds::contains(const Vector& v, double tol) const {
  require_dim(v.size(), size(), "bounded vector");
  return ((v.array() >= lower.array() - tol) && (v.array() <= upper.array() + tol)).all();
}

Vector Bounds::clamp(const Vector& v) const {
  require_dim(v.size(), size(), "bounded vector");
  return v.cwiseMax(lower).cwiseMin(upper);
}

void Bounds::validate(Index n, const std::string& what) const {
  require_dim(lower.size(), n, what + " lower bounds");
  require_dim(upper.size(), n, what + " upper bounds");
  for (Index i = 0; i < n; ++i) {
    if (std::isnan(lower(i)) || std::isnan(upper(i)) || !(lower(i) <= upper(i))) {
      throw std::invalid_argument(what + " bounds: empty interval in dimension " + std::to_string(i));
    }
  }
}

OcpSpec OcpSpec::with_horizon(int n) const {
  OcpSpec out = *this;
  out.horizon = n;
  return out;
}

void OcpSpec::validate() const {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  const Index nx = dynamics.state_dim();
  const Index nu = dynamics.input_dim();
  require_dim(q.size(), nx, "state cost");
  require_dim(r.size(), nu, "input cost");
  require_dim(goal.size(), nx, "goal");
  if ((q.array() < 0.0).any() || !q.allFinite()) throw std::invalid_argument("state cost must be nonnegative");
  if ((r.array() <= 0.0).any() || !r.allFinite()) throw std::invalid_argument("input cost must be positive");
  state_bounds.validate(nx, "state");
  input_bounds.validate(nu, "input");
  dynamics.params().validate();
  safety.validate();
}

// ---------------------------------------------------------------------------
// OcpProblem

struct OcpProblem::StageData {
  StageLinearization lin;  // transition from x_k, u_k
  BarrierEvaluation h_next;  // at x_{k+1}
};

OcpProblem::OcpProblem(OcpSpec spec, StateVector x0, ValueHandle terminal, double t0)
    : spec_(std::move(spec)), x0_(std::move(x0)), terminal_(std::move(terminal)), t0_(t0) {
  spec_.validate();
  const Index nx = spec_.dynamics.state_dim();
  require_dim(x0_.size(), nx, "initial state");
  if (!x0_.allFinite()) throw std::invalid_argument("initial state is not finite");
  if (terminal_) require_dim(terminal_->input_dim(), nx, "terminal value");

  goal_ = spec_.dynamics.align_goal(spec_.goal, x0_);
  const Matrix e = spec_.dynamics.cost_error_map(goal_);
  state_weight_ = e.transpose() * spec_.q.asDiagonal() * e;
  rest_jacobian_ = spec_.dynamics.rest_input_jacobian();

  auto rows_of = [](const Bounds& b, std::vector<BoundRow>& rows) {
    for (Index i = 0; i < b.size(); ++i) {
      if (std::isfinite(b.lower(i))) rows.push_back({i, -1.0, b.lower(i)});
      if (std::isfinite(b.upper(i))) rows.push_back({i, 1.0, b.upper(i)});
    }
  };
  rows_of(spec_.input_bounds, input_rows_);
  rows_of(spec_.state_bounds, state_rows_);
  barrier_ = spec_.safety.has_obstacles();
  per_stage_ = static_cast<Index>(input_rows_.size() + state_rows_.size()) + (barrier_ ? 1 : 0);
}

Index OcpProblem::num_variables() const {
  return spec_.horizon * (spec_.dynamics.state_dim() + spec_.dynamics.input_dim());
}
Index OcpProblem::num_parameters() const { return spec_.dynamics.param_dim(); }
Index OcpProblem::num_equalities() const { return spec_.horizon * spec_.dynamics.state_dim(); }
Index OcpProblem::num_inequalities() const { return spec_.horizon * per_stage_; }

Index OcpProblem::state_offset(int k) const { return (k - 1) * spec_.dynamics.state_dim(); }
Index OcpProblem::input_offset(int k) const {
  return spec_.horizon * spec_.dynamics.state_dim() + k * spec_.dynamics.input_dim();
}

StateVector OcpProblem::state(const Vector& w, int k) const {
  if (k == 0) return x0_;
  return w.segment(state_offset(k), spec_.dynamics.state_dim());
}

InputVector OcpProblem::input(const Vector& w, int k) const {
  return w.segment(input_offset(k), spec_.dynamics.input_dim());
}

Vector OcpProblem::pack(const Matrix& states, const Matrix& inputs) const {
  const int n = spec_.horizon;
  Vector w(num_variables());
  for (int k = 1; k <= n; ++k) w.segment(state_offset(k), states.cols()) = states.row(k).transpose();
  for (int k = 0; k < n; ++k) w.segment(input_offset(k), inputs.cols()) = inputs.row(k).transpose();
  return w;
}

Vector OcpProblem::pack_rollout(const Matrix& inputs) const {
  const int n = spec_.horizon;
  require_dim(inputs.rows(), n, "rollout length");
  require_dim(inputs.cols(), spec_.dynamics.input_dim(), "rollout input");
  Matrix states(n + 1, x0_.size());
  states.row(0) = x0_.transpose();
  for (int k = 0; k < n; ++k) {
    states.row(k + 1) = spec_.dynamics
                            .transition(states.row(k).transpose(), inputs.row(k).transpose(),
                                        spec_.theta().theta)
                            .transpose();
  }
  return pack(states, inputs);
}

double OcpProblem::state_cost(const Vector& x) const {
  const Vector d = x - goal_;
  return d.dot(state_weight_ * d);
}

std::vector<OcpProblem::StageData> OcpProblem::stages(const Vector& w, const Vector& theta,
                                                      Detail detail) const {
  require_dim(w.size(), num_variables(), "decision vector");
  require_dim(theta.size(), num_parameters(), "model parameters");
  const int n = spec_.horizon;
  const Index np = spec_.dynamics.position_dim();
  std::vector<StageData> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    StageData& sd = out[static_cast<std::size_t>(k)];
    const StateVector xk = state(w, k);
    const InputVector uk = input(w, k);
    if (detail == Detail::kFirstOrder) {
      sd.lin = spec_.dynamics.linearize(xk, uk, theta);
    } else if (detail == Detail::kValues) {
      sd.lin.next = spec_.dynamics.transition(xk, uk, theta);
    }
    if (barrier_) {
      const Vector p = w.segment(state_offset(k + 1), np);
      const double t = t0_ + (k + 1) * spec_.dt();
      if (detail != Detail::kValues) {
        sd.h_next = composite_h_derivatives(p, spec_.safety, t);
      } else {
        sd.h_next.value = composite_h(p, spec_.safety, t);
      }
    }
  }
  return out;
}

NlpValues OcpProblem::values(const Vector& w, const Vector& theta) const {
  return assemble_values(w, theta, stages(w, theta, Detail::kValues));
}

NlpValues OcpProblem::assemble_values(const Vector& w, const Vector& theta,
                                      const std::vector<StageData>& sd) const {
  const int n = spec_.horizon;
  const Index nx = spec_.dynamics.state_dim();
  const InputVector u_rest = spec_.dynamics.rest_input(theta);
  const double h0 = barrier_ ? composite_h(x0_.head(spec_.dynamics.position_dim()), spec_.safety, t0_) : 0.0;
  const double gamma = spec_.safety.gamma;

  NlpValues v;
  v.eq.resize(num_equalities());
  v.ineq.resize(num_inequalities());
  double j = 0.0;
  for (int k = 0; k < n; ++k) {
    const StageData& s = sd[static_cast<std::size_t>(k)];
    const StateVector xk = state(w, k);
    const InputVector uk = input(w, k);
    const StateVector x1 = state(w, k + 1);
    j += state_cost(xk);
    const Vector du = uk - u_rest;
    j += du.dot(spec_.r.asDiagonal() * du);
    v.eq.segment(k * nx, nx) = x1 - s.lin.next;

    Index row = k * per_stage_;
    for (const BoundRow& b : input_rows_) v.ineq(row++) = b.sign * (uk(b.dim) - b.bound);
    for (const BoundRow& b : state_rows_) v.ineq(row++) = b.sign * (x1(b.dim) - b.bound);
    if (barrier_) {
      const double hk = k == 0 ? h0 : sd[static_cast<std::size_t>(k - 1)].h_next.value;
      v.ineq(row++) = (1.0 - gamma) * hk - s.h_next.value;
    }
  }
  const StateVector xn = state(w, n);
  j += terminal_ ? terminal_->value(xn) : state_cost(xn);
  v.objective = j;
  return v;
}

NlpFirstOrder OcpProblem::first_order(const Vector& w, const Vector& theta) const {
  const auto sd = stages(w, theta, Detail::kFirstOrder);
  const int n = spec_.horizon;
  const Index nx = spec_.dynamics.state_dim();
  const Index nu = spec_.dynamics.input_dim();
  const Index np = spec_.dynamics.position_dim();
  const InputVector u_rest = spec_.dynamics.rest_input(theta);
  const double gamma = spec_.safety.gamma;

  NlpFirstOrder f;
  const NlpValues v = assemble_values(w, theta, sd);
  f.objective = v.objective;
  f.eq = v.eq;
  f.ineq = v.ineq;

  f.objective_gradient = Vector::Zero(num_variables());
  std::vector<Triplet> eq_t, in_t;
  eq_t.reserve(static_cast<std::size_t>(n * nx * (2 * nx + nu + 1)));
  for (int k = 0; k < n; ++k) {
    const StageData& s = sd[static_cast<std::size_t>(k)];
    const Index iu = input_offset(k);
    const Index ix1 = state_offset(k + 1);
    f.objective_gradient.segment(iu, nu) = 2.0 * spec_.r.asDiagonal() * (input(w, k) - u_rest);
    if (k >= 1) {
      f.objective_gradient.segment(state_offset(k), nx) =
          2.0 * state_weight_ * (state(w, k) - goal_);
    }
    for (Index i = 0; i < nx; ++i) {
      const Index row = k * nx + i;
      eq_t.emplace_back(row, ix1 + i, 1.0);
      if (k >= 1) {
        for (Index c = 0; c < nx; ++c) {
          if (s.lin.jac_state(i, c) != 0.0) eq_t.emplace_back(row, state_offset(k) + c, -s.lin.jac_state(i, c));
        }
      }
      for (Index c = 0; c < nu; ++c) {
        if (s.lin.jac_input(i, c) != 0.0) eq_t.emplace_back(row, iu + c, -s.lin.jac_input(i, c));
      }
    }
    Index row = k * per_stage_;
    for (const BoundRow& b : input_rows_) in_t.emplace_back(row++, iu + b.dim, b.sign);
    for (const BoundRow& b : state_rows_) in_t.emplace_back(row++, ix1 + b.dim, b.sign);
    if (barrier_) {
      for (Index c = 0; c < np; ++c) in_t.emplace_back(row, ix1 + c, -s.h_next.gradient(c));
      if (k >= 1) {
        const Vector& g = sd[static_cast<std::size_t>(k - 1)].h_next.gradient;
        for (Index c = 0; c < np; ++c) in_t.emplace_back(row, state_offset(k) + c, (1.0 - gamma) * g(c));
      }
      ++row;
    }
  }
  const StateVector xn = state(w, n);
  f.objective_gradient.segment(state_offset(n), nx) =
      terminal_ ? terminal_->gradient(xn) : Vector(2.0 * state_weight_ * (xn - goal_));

  f.eq_jacobian.resize(num_equalities(), num_variables());
  f.eq_jacobian.setFromTriplets(eq_t.begin(), eq_t.end());
  f.ineq_jacobian.resize(num_inequalities(), num_variables());
  f.ineq_jacobian.setFromTriplets(in_t.begin(), in_t.end());
  return f;
}

SparseMatrix OcpProblem::lagrangian_hessian(const Vector& w, const Vector& theta,
                                            const Vector& lambda, const Vector& mu) const {
  require_dim(lambda.size(), num_equalities(), "equality multipliers");
  require_dim(mu.size(), num_inequalities(), "inequality multipliers");
  const int n = spec_.horizon;
  const Index nx = spec_.dynamics.state_dim();
  const Index nu = spec_.dynamics.input_dim();
  const double gamma = spec_.safety.gamma;
  const auto sd = barrier_ ? stages(w, theta, Detail::kBarrierCurvature) : std::vector<StageData>{};

  std::vector<Triplet> t;
  auto add_block = [&](Index r0, Index c0, const Matrix& m) {
    for (Index c = 0; c < m.cols(); ++c) {
      for (Index r = 0; r < m.rows(); ++r) {
        if (m(r, c) != 0.0) t.emplace_back(r0 + r, c0 + c, m(r, c));
      }
    }
  };

  const Matrix two_w = 2.0 * state_weight_;
  const Matrix two_r = 2.0 * Matrix(spec_.r.asDiagonal());
  for (int k = 0; k < n; ++k) {
    const Index iu = input_offset(k);
    add_block(iu, iu, two_r);
    if (k >= 1) add_block(state_offset(k), state_offset(k), two_w);

    // -lambda_k' f(x_k, u_k) contributes over (x_k, u_k); x_0 is fixed.
    const Vector lk = lambda.segment(k * nx, nx);
    if (lk.cwiseAbs().maxCoeff() > 0.0) {
      const Matrix hf = -spec_.dynamics.transition_hessian(state(w, k), input(w, k), theta, lk);
      add_block(iu, iu, hf.bottomRightCorner(nu, nu));
      if (k >= 1) {
        const Index ix = state_offset(k);
        add_block(ix, ix, hf.topLeftCorner(nx, nx));
        add_block(ix, iu, hf.topRightCorner(nx, nu));
        add_block(iu, ix, hf.bottomLeftCorner(nu, nx));
      }
    }
    if (barrier_) {
      const double m = mu(k * per_stage_ + per_stage_ - 1);
      if (m != 0.0) {
        add_block(state_offset(k + 1), state_offset(k + 1),
                  -m * sd[static_cast<std::size_t>(k)].h_next.hessian);
        if (k >= 1) {
          add_block(state_offset(k), state_offset(k),
                    m * (1.0 - gamma) * sd[static_cast<std::size_t>(k - 1)].h_next.hessian);
        }
      }
    }
  }
  const StateVector xn = state(w, n);
  add_block(state_offset(n), state_offset(n), terminal_ ? terminal_->hessian(xn) : two_w);

  SparseMatrix h(num_variables(), num_variables());
  h.setFromTriplets(t.begin(), t.end());
  return h;
}

NlpParameterDerivatives OcpProblem::parameter_derivatives(const Vector& w, const Vector& theta,
                                                          const Vector& lambda,
                                                          const Vector& /*mu*/) const {
  require_dim(lambda.size(), num_equalities(), "equality multipliers");
  const int n = spec_.horizon;
  const Index nx = spec_.dynamics.state_dim();
  const Index nu = spec_.dynamics.input_dim();
  const Index nq = num_parameters();
  const InputVector u_rest = spec_.dynamics.rest_input(theta);

  NlpParameterDerivatives d;
  d.objective = Vector::Zero(nq);
  d.eq = Matrix::Zero(num_equalities(), nq);
  d.ineq = Matrix::Zero(num_inequalities(), nq);
  d.lagrangian_mixed = Matrix::Zero(num_variables(), nq);
  const Matrix r_rest = 2.0 * spec_.r.asDiagonal() * rest_jacobian_;
  for (int k = 0; k < n; ++k) {
    const StateVector xk = state(w, k);
    const InputVector uk = input(w, k);
    const Index iu = input_offset(k);
    d.objective -= r_rest.transpose() * (uk - u_rest);
    d.lagrangian_mixed.middleRows(iu, nu) -= r_rest;

    const StageLinearization lin = spec_.dynamics.linearize(xk, uk, theta);
    d.eq.middleRows(k * nx, nx) = -lin.jac_param;
    const Vector lk = lambda.segment(k * nx, nx);
    if (lk.cwiseAbs().maxCoeff() > 0.0) {
      const Matrix hf = spec_.dynamics.transition_hessian_with_params(xk, uk, theta, lk);
      const Matrix mixed = -hf.topRightCorner(nx + nu, nq);
      d.lagrangian_mixed.middleRows(iu, nu) += mixed.bottomRows(nu);
      if (k >= 1) d.lagrangian_mixed.middleRows(state_offset(k), nx) += mixed.topRows(nx);
    }
  }
  return d;
}

std::optional<StageHint> OcpProblem::stage_hint() const {
  const int n = spec_.horizon;
  const Index nx = spec_.dynamics.state_dim();
  const Index nu = spec_.dynamics.input_dim();
  StageHint hint;
  hint.variable.resize(static_cast<std::size_t>(num_variables()));
  for (int k = 0; k < n; ++k) {
    for (Index i = 0; i < nx; ++i) hint.variable[static_cast<std::size_t>(state_offset(k + 1) + i)] = k;
    for (Index i = 0; i < nu; ++i) hint.variable[static_cast<std::size_t>(input_offset(k) + i)] = k;
    for (Index i = 0; i < nx; ++i) hint.equality.push_back(k);
    for (Index i = 0; i < per_stage_; ++i) hint.inequality.push_back(k);
  }
  return hint;
}

std::unique_ptr<OcpProblem> build_ocp(const OcpSpec& spec, const StateVector& x0,
                                      ValueHandle terminal, double t0) {
  return std::make_unique<OcpProblem>(spec, x0, std::move(terminal), t0);
}

// ---------------------------------------------------------------------------
// Controllers

std::string to_string(ControlStatus status) {
  switch (status) {
    case ControlStatus::kConverged: return "converged";
    case ControlStatus::kDegraded: return "degraded";
    case ControlStatus::kFailed: return "failed";
  }
  return "unknown";
}

MpcController::MpcController(OcpSpec spec, ValueHandle terminal, std::string name, MpcOptions opts)
    : spec_(std::move(spec)), terminal_(std::move(terminal)), name_(std::move(name)), opts_(opts) {
  spec_.validate();
  if (terminal_) require_dim(terminal_->input_dim(), spec_.dynamics.state_dim(), "terminal value");
}

void MpcController::reset() {
  last_.reset();
  last_input_.reset();
}

InitialGuess MpcController::initial_guess(const OcpProblem& ocp) const {
  const int n = spec_.horizon;
  const Index nx = spec_.dynamics.state_dim();
  const Index nu = spec_.dynamics.input_dim();
  InitialGuess g;
  if (!opts_.warm_start || !last_ || last_->w.size() != ocp.num_variables() ||
      last_->mu.size() != ocp.num_inequalities()) {
    const InputVector rest = spec_.input_bounds.clamp(spec_.dynamics.rest_input(spec_.theta().theta));
    g.w = ocp.pack_rollout(rest.transpose().replicate(n, 1));
    return g;
  }
  // Shift every stage block forward by one and repeat the last one.
  const KktPoint& p = *last_;
  g.w.resize(p.w.size());
  Vector lambda(p.lambda.size()), mu(p.mu.size());
  const Index per = ocp.inequalities_per_stage();
  for (int k = 0; k < n; ++k) {
    const int src = std::min(k + 1, n - 1);
    g.w.segment(ocp.input_offset(k), nu) = p.w.segment(ocp.input_offset(src), nu);
    lambda.segment(k * nx, nx) = p.lambda.segment(src * nx, nx);
    mu.segment(k * per, per) = p.mu.segment(src * per, per);
  }
  for (int k = 1; k <= n; ++k) {
    if (k < n) {
      g.w.segment(ocp.state_offset(k), nx) = p.w.segment(ocp.state_offset(k + 1), nx);
    } else {
      const StateVector xl = p.w.segment(ocp.state_offset(n), nx);
      const InputVector ul = p.w.segment(ocp.input_offset(n - 1), nu);
      g.w.segment(ocp.state_offset(n), nx) = spec_.dynamics.transition(xl, ul, spec_.theta().theta);
    }
  }
  g.lambda = lambda;
  g.mu = mu;
  return g;
}

ControlResult MpcController::control(const StateVector& x, double t) {
  const auto start = std::chrono::steady_clock::now();
  const auto ocp = build_ocp(spec_, x, terminal_, t);
  const Vector& theta = spec_.theta().theta;

  SolveReport rep = solve_nlp(*ocp, theta, initial_guess(*ocp), opts_.solver);
  int iterations = rep.iterations;
  if (rep.status != SolveStatus::kConverged && last_) {
    last_.reset();
    rep = solve_nlp(*ocp, theta, initial_guess(*ocp), opts_.solver);
    iterations += rep.iterations;
  }

  ControlResult res;
  res.iterations = iterations;
  const int n = spec_.horizon;
  const Index nx = spec_.dynamics.state_dim();
  const Index nu = spec_.dynamics.input_dim();
  if (rep.status == SolveStatus::kConverged) {
    const Vector& w = rep.point.w;
    res.status = ControlStatus::kConverged;
    res.predicted_states.resize(n + 1, nx);
    res.predicted_inputs.resize(n, nu);
    for (int k = 0; k <= n; ++k) res.predicted_states.row(k) = ocp->state(w, k).transpose();
    for (int k = 0; k < n; ++k) res.predicted_inputs.row(k) = ocp->input(w, k).transpose();
    res.u0 = spec_.input_bounds.clamp(ocp->input(w, 0));
    res.objective_value = rep.point.objective_value;
    res.kkt_point = rep.point;
    last_ = std::move(rep.point);
  } else {
    last_.reset();
    const InputVector rest = spec_.dynamics.rest_input(theta);
    if (last_input_) {
      res.u0 = spec_.input_bounds.clamp(rest + 0.5 * (*last_input_ - rest));
      res.status = ControlStatus::kDegraded;
    } else {
      res.u0 = spec_.input_bounds.clamp(rest);
      res.status = ControlStatus::kFailed;
    }
    res.objective_value = std::numeric_limits<double>::quiet_NaN();
  }
  last_input_ = res.u0;
  res.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::unique_ptr<MpcController> cbf_mpc(const OcpSpec& spec, MpcOptions opts) {
  return std::make_unique<MpcController>(spec, nullptr, "cbf-mpc", opts);
}

std::unique_ptr<MpcController> short_horizon_mpc(const OcpSpec& spec, int m, MpcOptions opts) {
  return std::make_unique<MpcController>(spec.with_horizon(m), nullptr, "short", opts);
}

std::unique_ptr<MpcController> neural_mpc(const OcpSpec& spec, int m,
                                          std::shared_ptr<const MlpNetwork> value,
                                          MpcOptions opts) {
  return std::make_unique<MpcController>(spec.with_horizon(m),
                                         std::make_shared<NetworkValue>(std::move(value)),
                                         "neural", opts);
}

std::unique_ptr<MpcController> ban_mpc(const OcpSpec& spec, int m,
                                       std::shared_ptr<const MlpNetwork> value,
                                       std::shared_ptr<const MlpNetwork> sensitivity,
                                       MpcOptions opts) {
  auto terminal = std::make_shared<AdaptiveValue>(std::move(value), std::move(sensitivity),
                                                  spec.theta().theta, spec.theta().theta_nom);
  return std::make_unique<MpcController>(spec.with_horizon(m), std::move(terminal), "ban-mpc",
                                         opts);
}

InputVector ampc_policy(const MlpNetwork& net, const Bounds& input_bounds, const StateVector& x) {
  require_dim(net.output_dim(), input_bounds.size(), "policy output");
  return input_bounds.clamp(net.forward(x));
}

AmpcController::AmpcController(std::shared_ptr<const MlpNetwork> net, Bounds input_bounds)
    : net_(std::move(net)), bounds_(std::move(input_bounds)) {
  if (!net_) throw std::invalid_argument("policy network is null");
  require_dim(net_->output_dim(), bounds_.size(), "policy output");
}

ControlResult AmpcController::control(const StateVector& x, double /*t*/) {
  const auto start = std::chrono::steady_clock::now();
  ControlResult res;
  res.u0 = ampc_policy(*net_, bounds_, x);
  res.status = ControlStatus::kConverged;
  res.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace banmpc
