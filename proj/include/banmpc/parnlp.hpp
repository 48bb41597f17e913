#pragma once

// Parametric nonlinear programs
//
//     V*(theta) = min_w J(w, theta)  s.t.  c(w, theta) = 0,  g(w, theta) <= 0,
//
// a primal-dual interior-point solver that returns KKT points, active-set
// extraction, and first-order parametric sensitivities of the solution and the
// optimal value obtained from the implicit function theorem on the reduced KKT
// system [grad_w L; c; g_A] = 0.
//
// Multiplier convention: L = J + lambda' c + mu' g with mu >= 0.

#include "banmpc/types.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace banmpc {

struct NlpValues {
  double objective = 0.0;
  Vector eq;
  Vector ineq;
};

struct NlpFirstOrder {
  double objective = 0.0;
  Vector objective_gradient;
  Vector eq;
  SparseMatrix eq_jacobian;  // n_eq x n_w
  Vector ineq;
  SparseMatrix ineq_jacobian;  // n_ineq x n_w
};

/// Derivatives with respect to the parameter, as needed by sensitivity analysis.
struct NlpParameterDerivatives {
  Vector objective;         // dJ/dtheta (n_theta)
  Matrix eq;                // dc/dtheta (n_eq x n_theta)
  Matrix ineq;              // dg/dtheta (n_ineq x n_theta)
  Matrix lagrangian_mixed;  // d^2 L / dw dtheta (n_w x n_theta)
};

/// Optional elimination-order hint: the stage each variable and constraint
/// belongs to. Problems with chain structure (multiple shooting) supply it so
/// the KKT factorization follows the stage order.
struct StageHint {
  std::vector<int> variable;
  std::vector<int> equality;
  std::vector<int> inequality;
};

/// Callback interface of a parametric NLP. Implementations must be reentrant.
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  virtual Index num_variables() const = 0;
  virtual Index num_parameters() const = 0;
  virtual Index num_equalities() const = 0;
  virtual Index num_inequalities() const = 0;

  virtual NlpValues values(const Vector& w, const Vector& theta) const = 0;
  virtual NlpFirstOrder first_order(const Vector& w, const Vector& theta) const = 0;
  /// Full symmetric Hessian of the Lagrangian with respect to w.
  virtual SparseMatrix lagrangian_hessian(const Vector& w, const Vector& theta,
                                          const Vector& lambda, const Vector& mu) const = 0;
  virtual NlpParameterDerivatives parameter_derivatives(const Vector& w, const Vector& theta,
                                                        const Vector& lambda,
                                                        const Vector& mu) const = 0;

  virtual std::optional<StageHint> stage_hint() const { return std::nullopt; }
};

/// NLP assembled from dense callbacks. Missing second-derivative or parameter
/// callbacks are treated as identically zero.
struct DenseNlpCallbacks {
  using Scalar = std::function<double(const Vector&, const Vector&)>;
  using Vec = std::function<Vector(const Vector&, const Vector&)>;
  using Mat = std::function<Matrix(const Vector&, const Vector&)>;
  using Mats = std::function<std::vector<Matrix>(const Vector&, const Vector&)>;

  Index n_w = 0;
  Index n_theta = 0;
  Index n_eq = 0;
  Index n_ineq = 0;

  Scalar objective;
  Vec objective_gradient;
  Mat objective_hessian;
  Vec objective_theta_gradient;
  Mat objective_mixed_hessian;  // d^2 J / dw dtheta

  Vec eq;
  Mat eq_jacobian;
  Mats eq_hessians;        // one n_w x n_w matrix per constraint
  Mat eq_theta_jacobian;
  Mats eq_mixed_hessians;  // one n_w x n_theta matrix per constraint

  Vec ineq;
  Mat ineq_jacobian;
  Mats ineq_hessians;
  Mat ineq_theta_jacobian;
  Mats ineq_mixed_hessians;
};

class DenseNlp final : public NlpProblem {
 public:
  explicit DenseNlp(DenseNlpCallbacks callbacks);

  Index num_variables() const override { return cb_.n_w; }
  Index num_parameters() const override { return cb_.n_theta; }
  Index num_equalities() const override { return cb_.n_eq; }
  Index num_inequalities() const override { return cb_.n_ineq; }

  NlpValues values(const Vector& w, const Vector& theta) const override;
  NlpFirstOrder first_order(const Vector& w, const Vector& theta) const override;
  SparseMatrix lagrangian_hessian(const Vector& w, const Vector& theta, const Vector& lambda,
                                  const Vector& mu) const override;
  NlpParameterDerivatives parameter_derivatives(const Vector& w, const Vector& theta,
                                                const Vector& lambda,
                                                const Vector& mu) const override;

 private:
  DenseNlpCallbacks cb_;
};

/// Primal-dual solution of a parametric NLP.
struct KktPoint {
  Vector w;
  Vector lambda;
  Vector mu;
  std::vector<Index> active_set;
  Vector theta;
  double objective_value = 0.0;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iterations = 200;
  /// Initial barrier parameter for cold starts and for warm starts that carry multipliers.
  double mu_init = 0.1;
  double warm_mu_init = 1e-3;
  double tol_act = 1e-6;
  /// Drop constraint curvature from the Hessian on iterations where the exact
  /// Hessian has the wrong inertia, before resorting to diagonal shifts.
  bool gauss_newton_fallback = true;
  /// Newton refinement on the identified active set after convergence.
  bool polish = true;
  /// Per-iteration trace on stderr.
  bool verbose = false;
};

enum class SolveStatus { kConverged, kMaxIterations, kInfeasible, kNumericalFailure };

std::string to_string(SolveStatus status);

/// Starting point; multipliers are optional and enable a warm start.
struct InitialGuess {
  Vector w;
  std::optional<Vector> lambda;
  std::optional<Vector> mu;
};

struct SolveReport {
  SolveStatus status = SolveStatus::kNumericalFailure;
  KktPoint point;  // last iterate when not converged
  int iterations = 0;
  double residual = 0.0;
  bool polished = false;
};

class NlpError : public std::runtime_error {
 public:
  NlpError(SolveStatus status, const std::string& what)
      : std::runtime_error(what), status_(status) {}
  SolveStatus status() const { return status_; }

 private:
  SolveStatus status_;
};

/// Runs the solver and reports the outcome without throwing on non-convergence.
SolveReport solve_nlp(const NlpProblem& problem, const Vector& theta, const InitialGuess& init,
                      const SolverOptions& opts = {});

/// Like solve_nlp but throws NlpError unless the solver converged.
KktPoint solve(const NlpProblem& problem, const Vector& theta, const InitialGuess& init,
               const SolverOptions& opts = {});

/// Max-norm of stationarity, equality violation, inequality violation,
/// complementarity and dual infeasibility at a point.
double kkt_residual(const NlpProblem& problem, const KktPoint& point);

struct ActiveSet {
  std::vector<Index> indices;
  /// Active constraints whose multiplier is not bounded away from zero.
  std::vector<Index> weakly_active;
  bool strictly_complementary() const { return weakly_active.empty(); }
};

ActiveSet active_set(const KktPoint& point, const NlpProblem& problem, double tol_act = 1e-6);

struct SolutionSensitivity {
  /// d(w, lambda, mu_A)/dtheta, rows ordered as w, lambda, then active multipliers.
  Matrix ds_dtheta;
  Vector dV_dtheta;
  std::vector<Index> active_set;
  Index n_w = 0;
  Index n_eq = 0;

  auto dw_dtheta() const { return ds_dtheta.topRows(n_w); }
  auto dlambda_dtheta() const { return ds_dtheta.middleRows(n_w, n_eq); }
  auto dmu_active_dtheta() const {
    return ds_dtheta.bottomRows(static_cast<Index>(active_set.size()));
  }
};

class SensitivityError : public std::runtime_error {
 public:
  enum class Kind { kSingularKkt, kWeakActivity };
  SensitivityError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Sensitivities at a strictly complementary KKT point. Throws SensitivityError.
SolutionSensitivity solution_sensitivity(const NlpProblem& problem, const KktPoint& point,
                                         double tol_act = 1e-6);

/// Envelope-theorem value gradient dV/dtheta = grad_theta L at the point. Does
/// not require strict complementarity.
Vector value_gradient(const NlpProblem& problem, const KktPoint& point);

/// First-order prediction s(theta + dtheta) ~ s(theta) + ds/dtheta dtheta.
KktPoint predict_solution(const KktPoint& point, const SolutionSensitivity& sens,
                          const Vector& dtheta);

}  // namespace banmpc
