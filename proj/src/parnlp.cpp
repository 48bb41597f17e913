#include "banmpc/parnlp.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <variant>

namespace banmpc {

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::kConverged: return "converged";
    case SolveStatus::kMaxIterations: return "max_iterations";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kNumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// DenseNlp

DenseNlp::DenseNlp(DenseNlpCallbacks callbacks) : cb_(std::move(callbacks)) {
  if (!cb_.objective || !cb_.objective_gradient) {
    throw std::invalid_argument("dense NLP needs an objective and its gradient");
  }
  if (cb_.n_eq > 0 && (!cb_.eq || !cb_.eq_jacobian)) {
    throw std::invalid_argument("dense NLP equalities need values and a Jacobian");
  }
  if (cb_.n_ineq > 0 && (!cb_.ineq || !cb_.ineq_jacobian)) {
    throw std::invalid_argument("dense NLP inequalities need values and a Jacobian");
  }
}

NlpValues DenseNlp::values(const Vector& w, const Vector& theta) const {
  NlpValues v;
  v.objective = cb_.objective(w, theta);
  v.eq = cb_.n_eq > 0 ? cb_.eq(w, theta) : Vector(0);
  v.ineq = cb_.n_ineq > 0 ? cb_.ineq(w, theta) : Vector(0);
  return v;
}

NlpFirstOrder DenseNlp::first_order(const Vector& w, const Vector& theta) const {
  NlpFirstOrder f;
  f.objective = cb_.objective(w, theta);
  f.objective_gradient = cb_.objective_gradient(w, theta);
  f.eq = cb_.n_eq > 0 ? cb_.eq(w, theta) : Vector(0);
  f.eq_jacobian = cb_.n_eq > 0 ? Matrix(cb_.eq_jacobian(w, theta)).sparseView()
                               : SparseMatrix(0, cb_.n_w);
  f.ineq = cb_.n_ineq > 0 ? cb_.ineq(w, theta) : Vector(0);
  f.ineq_jacobian = cb_.n_ineq > 0 ? Matrix(cb_.ineq_jacobian(w, theta)).sparseView()
                                   : SparseMatrix(0, cb_.n_w);
  return f;
}

SparseMatrix DenseNlp::lagrangian_hessian(const Vector& w, const Vector& theta,
                                          const Vector& lambda, const Vector& mu) const {
  Matrix h = Matrix::Zero(cb_.n_w, cb_.n_w);
  if (cb_.objective_hessian) h += cb_.objective_hessian(w, theta);
  if (cb_.n_eq > 0 && cb_.eq_hessians) {
    const auto hs = cb_.eq_hessians(w, theta);
    for (Index i = 0; i < cb_.n_eq; ++i) h += lambda(i) * hs[static_cast<std::size_t>(i)];
  }
  if (cb_.n_ineq > 0 && cb_.ineq_hessians) {
    const auto hs = cb_.ineq_hessians(w, theta);
    for (Index i = 0; i < cb_.n_ineq; ++i) h += mu(i) * hs[static_cast<std::size_t>(i)];
  }
  return h.sparseView();
}

NlpParameterDerivatives DenseNlp::parameter_derivatives(const Vector& w, const Vector& theta,
                                                        const Vector& lambda,
                                                        const Vector& mu) const {
  const Index q = cb_.n_theta;
  NlpParameterDerivatives d;
  d.objective = cb_.objective_theta_gradient ? cb_.objective_theta_gradient(w, theta)
                                             : Vector(Vector::Zero(q));
  d.eq = (cb_.n_eq > 0 && cb_.eq_theta_jacobian) ? cb_.eq_theta_jacobian(w, theta)
                                                 : Matrix(Matrix::Zero(cb_.n_eq, q));
  d.ineq = (cb_.n_ineq > 0 && cb_.ineq_theta_jacobian) ? cb_.ineq_theta_jacobian(w, theta)
                                                       : Matrix(Matrix::Zero(cb_.n_ineq, q));
  d.lagrangian_mixed = cb_.objective_mixed_hessian ? cb_.objective_mixed_hessian(w, theta)
                                                   : Matrix(Matrix::Zero(cb_.n_w, q));
  if (cb_.n_eq > 0 && cb_.eq_mixed_hessians) {
    const auto hs = cb_.eq_mixed_hessians(w, theta);
    for (Index i = 0; i < cb_.n_eq; ++i) {
      d.lagrangian_mixed += lambda(i) * hs[static_cast<std::size_t>(i)];
    }
  }
  if (cb_.n_ineq > 0 && cb_.ineq_mixed_hessians) {
    const auto hs = cb_.ineq_mixed_hessians(w, theta);
    for (Index i = 0; i < cb_.n_ineq; ++i) {
      d.lagrangian_mixed += mu(i) * hs[static_cast<std::size_t>(i)];
    }
  }
  return d;
}

namespace {

// ---------------------------------------------------------------------------
// Symmetric indefinite KKT factorization with inertia
//
//   [ H + dw I      J' ]
//   [ J        -dc I   ]
//
// Sparse LDL' in a fixed elimination order (stage order when hinted, AMD
// otherwise) or a dense eigen-decomposition for small systems.

class KktFactor {
 public:
  KktFactor(Index n, const std::vector<int>& variable_stage, const std::vector<int>& row_stage,
            bool dense)
      : n_(n), m_(static_cast<Index>(row_stage.size())), dense_(dense) {
    const Index total = n_ + m_;
    perm_.resize(total);
    if (!variable_stage.empty()) {
      // Order by stage; within a stage primal entries come before constraint rows.
      std::vector<Index> order(static_cast<std::size_t>(total));
      std::iota(order.begin(), order.end(), Index{0});
      auto key = [&](Index i) {
        return i < n_ ? std::pair<int, int>(variable_stage[static_cast<std::size_t>(i)], 0)
                      : std::pair<int, int>(row_stage[static_cast<std::size_t>(i - n_)], 1);
      };
      std::stable_sort(order.begin(), order.end(),
                       [&](Index a, Index b) { return key(a) < key(b); });
      for (Index p = 0; p < total; ++p) perm_(order[static_cast<std::size_t>(p)]) = p;
      natural_ = true;
    } else {
      std::iota(perm_.data(), perm_.data() + total, Index{0});
      natural_ = false;
    }
  }

  // Returns false when the factorization breaks down.
  bool factorize(const SparseMatrix& hess, const SparseMatrix& jac, double dw, double dc) {
    const Index total = n_ + m_;
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(hess.nonZeros() + jac.nonZeros() + total));
    auto add = [&](Index r, Index c, double v) {
      const Index pr = perm_(r);
      const Index pc = perm_(c);
      if (pr >= pc) trip.emplace_back(pr, pc, v);
    };
    for (Index k = 0; k < hess.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(hess, k); it; ++it) add(it.row(), it.col(), it.value());
    }
    for (Index k = 0; k < jac.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(jac, k); it; ++it) {
        add(n_ + it.row(), it.col(), it.value());
        add(it.col(), n_ + it.row(), it.value());
      }
    }
    for (Index i = 0; i < n_; ++i) add(i, i, dw);
    for (Index i = 0; i < m_; ++i) add(n_ + i, n_ + i, -dc);
    lower_ = SparseMatrix(total, total);
    lower_.setFromTriplets(trip.begin(), trip.end());

    positive_ = negative_ = zero_ = 0;
    if (dense_) {
      const SparseMatrix sym = lower_.selfadjointView<Eigen::Lower>();
      Matrix full(sym);
      // Symmetric Ruiz equilibration: D K D has the inertia of K (Sylvester)
      // but no barrier-sized rows hiding small eigenvalues.
      equil_ = Vector::Ones(total);
      for (int pass = 0; pass < 5; ++pass) {
        Vector d = full.cwiseAbs().rowwise().maxCoeff();
        for (Index i = 0; i < total; ++i) d(i) = d(i) > 0.0 ? 1.0 / std::sqrt(d(i)) : 1.0;
        full = d.asDiagonal() * full * d.asDiagonal();
        equil_ = equil_.cwiseProduct(d);
      }
      eig_.compute(full);
      if (eig_.info() != Eigen::Success) return false;
      const Vector& ev = eig_.eigenvalues();
      const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
      for (Index i = 0; i < ev.size(); ++i) {
        if (std::abs(ev(i)) <= 64.0 * std::numeric_limits<double>::epsilon() * scale) ++zero_;
        else if (ev(i) > 0.0) ++positive_;
        else ++negative_;
      }
      return zero_ == 0;
    }
    Vector diag;
    if (natural_) {
      natural_ldlt_.compute(lower_);
      if (natural_ldlt_.info() != Eigen::Success) return false;
      diag = natural_ldlt_.vectorD();
    } else {
      amd_ldlt_.compute(lower_);
      if (amd_ldlt_.info() != Eigen::Success) return false;
      diag = amd_ldlt_.vectorD();
    }
    if (!diag.allFinite()) return false;
    // Pivots are judged against the size of their own row; barrier terms make
    // the largest diagonal entry useless as a global scale.
    Vector row_scale = Vector::Zero(total);
    for (Index k = 0; k < lower_.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(lower_, k); it; ++it) {
        const double a = std::abs(it.value());
        row_scale(it.row()) = std::max(row_scale(it.row()), a);
        row_scale(it.col()) = std::max(row_scale(it.col()), a);
      }
    }
    if (!natural_) row_scale = amd_ldlt_.permutationP() * row_scale;
    for (Index i = 0; i < diag.size(); ++i) {
      if (std::abs(diag(i)) <= 1e-15 * std::max(1.0, row_scale(i))) ++zero_;
      else if (diag(i) > 0.0) ++positive_;
      else ++negative_;
    }
    return zero_ == 0;
  }

  bool correct_inertia() const { return positive_ == n_ && negative_ == m_ && zero_ == 0; }
  Index zero_pivots() const { return zero_; }

  // Solves the factorized system with two steps of iterative refinement.
  Vector solve(const Vector& rhs) const {
    const Index total = n_ + m_;
    Vector b(total);
    for (Index i = 0; i < total; ++i) b(perm_(i)) = rhs(i);
    Vector x = raw_solve(b);
    for (int pass = 0; pass < 2; ++pass) {
      const Vector r = b - apply(x);
      if (r.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, b.lpNorm<Eigen::Infinity>())) break;
      x += raw_solve(r);
    }
    Vector out(total);
    for (Index i = 0; i < total; ++i) out(i) = x(perm_(i));
    return out;
  }

 private:
  Vector raw_solve(const Vector& b) const {
    if (dense_) {
      const Matrix& v = eig_.eigenvectors();
      const Vector scaled = equil_.cwiseProduct(b);
      return equil_.cwiseProduct(v * (v.transpose() * scaled).cwiseQuotient(eig_.eigenvalues()));
    }
    if (natural_) return natural_ldlt_.solve(b);
    return amd_ldlt_.solve(b);
  }

  Vector apply(const Vector& x) const {
    return lower_.selfadjointView<Eigen::Lower>() * x;
  }

  Index n_;
  Index m_;
  bool dense_;
  bool natural_ = false;
  Eigen::Matrix<Index, Eigen::Dynamic, 1> perm_;
  SparseMatrix lower_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::NaturalOrdering<int>> natural_ldlt_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> amd_ldlt_;
  Eigen::SelfAdjointEigenSolver<Matrix> eig_;
  Vector equil_;
  Index positive_ = 0;
  Index negative_ = 0;
  Index zero_ = 0;
};

constexpr Index kDenseLimit = 60;

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

SparseMatrix select_rows(const SparseMatrix& m, const std::vector<Index>& rows) {
  SparseMatrix sel(static_cast<Index>(rows.size()), m.rows());
  std::vector<Triplet> trip;
  for (std::size_t i = 0; i < rows.size(); ++i) trip.emplace_back(static_cast<Index>(i), rows[i], 1.0);
  sel.setFromTriplets(trip.begin(), trip.end());
  return sel * m;
}

SparseMatrix stack_rows(const SparseMatrix& top, const SparseMatrix& bottom) {
  SparseMatrix out(top.rows() + bottom.rows(), top.cols());
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(top.nonZeros() + bottom.nonZeros()));
  for (Index k = 0; k < top.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(top, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
  }
  for (Index k = 0; k < bottom.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(bottom, k); it; ++it) {
      trip.emplace_back(top.rows() + it.row(), it.col(), it.value());
    }
  }
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

double residual_at(const NlpFirstOrder& f, const Vector& lambda, const Vector& mu) {
  Vector stat = f.objective_gradient;
  if (lambda.size() > 0) stat += f.eq_jacobian.transpose() * lambda;
  if (mu.size() > 0) stat += f.ineq_jacobian.transpose() * mu;
  double r = inf_norm(stat);
  r = std::max(r, inf_norm(f.eq));
  if (f.ineq.size() > 0) {
    r = std::max(r, f.ineq.cwiseMax(0.0).maxCoeff());
    r = std::max(r, f.ineq.cwiseProduct(mu).cwiseAbs().maxCoeff());
    r = std::max(r, (-mu).cwiseMax(0.0).maxCoeff());
  }
  return r;
}

struct Layout {
  std::vector<int> variable;
  std::vector<int> equality;
  std::vector<int> inequality;
  bool hinted = false;
};

Layout layout_of(const NlpProblem& problem) {
  Layout l;
  if (auto hint = problem.stage_hint()) {
    require_dim(static_cast<Index>(hint->variable.size()), problem.num_variables(), "variable stages");
    require_dim(static_cast<Index>(hint->equality.size()), problem.num_equalities(), "equality stages");
    require_dim(static_cast<Index>(hint->inequality.size()), problem.num_inequalities(),
                "inequality stages");
    l.variable = hint->variable;
    l.equality = hint->equality;
    l.inequality = hint->inequality;
    l.hinted = true;
  }
  return l;
}

std::vector<int> row_stages(const Layout& l, Index n_eq, const std::vector<Index>& ineq_rows) {
  std::vector<int> rows;
  if (!l.hinted) {
    rows.assign(static_cast<std::size_t>(n_eq) + ineq_rows.size(), 0);
    return rows;
  }
  rows = l.equality;
  for (Index i : ineq_rows) rows.push_back(l.inequality[static_cast<std::size_t>(i)]);
  return rows;
}

// Newton iterations on [grad L; c; g_A] = 0 with inactive multipliers fixed at
// zero. Returns true and updates the point when the refined point is a valid KKT
// point with a smaller residual.
bool polish_point(const NlpProblem& problem, const Vector& theta, const Layout& layout,
                  const std::vector<Index>& active, KktPoint& point, double& residual) {
  const Index n = problem.num_variables();
  const Index n_eq = problem.num_equalities();
  const Index n_in = problem.num_inequalities();
  const auto n_a = static_cast<Index>(active.size());

  Vector w = point.w;
  Vector lambda = point.lambda;
  Vector mu_a(n_a);
  for (Index i = 0; i < n_a; ++i) mu_a(i) = point.mu(active[static_cast<std::size_t>(i)]);

  std::vector<int> var_stage = layout.hinted ? layout.variable : std::vector<int>();
  KktFactor factor(n, var_stage, row_stages(layout, n_eq, active), n + n_eq + n_a <= kDenseLimit);

  auto full_mu = [&](const Vector& ma) {
    Vector mu = Vector::Zero(n_in);
    for (Index i = 0; i < n_a; ++i) mu(active[static_cast<std::size_t>(i)]) = ma(i);
    return mu;
  };

  for (int iter = 0; iter < 6; ++iter) {
    const NlpFirstOrder f = problem.first_order(w, theta);
    const SparseMatrix g_a = select_rows(f.ineq_jacobian, active);
    Vector ga(n_a);
    for (Index i = 0; i < n_a; ++i) ga(i) = f.ineq(active[static_cast<std::size_t>(i)]);
    Vector rhs(n + n_eq + n_a);
    rhs.head(n) = f.objective_gradient;
    if (n_eq > 0) rhs.head(n) += f.eq_jacobian.transpose() * lambda;
    if (n_a > 0) rhs.head(n) += g_a.transpose() * mu_a;
    rhs.segment(n, n_eq) = f.eq;
    rhs.tail(n_a) = ga;
    if (inf_norm(rhs) <= 1e-14) break;
    const SparseMatrix hess = problem.lagrangian_hessian(w, theta, lambda, full_mu(mu_a));
    const SparseMatrix jac = stack_rows(f.eq_jacobian, g_a);
    if (!factor.factorize(hess, jac, 0.0, 0.0)) {
      if (!factor.factorize(hess, jac, 0.0, 1e-12)) return false;
    }
    const Vector step = factor.solve(-rhs);
    if (!step.allFinite()) return false;
    w += step.head(n);
    lambda += step.segment(n, n_eq);
    mu_a += step.tail(n_a);
  }

  if ((mu_a.array() < 0.0).any()) return false;
  KktPoint candidate = point;
  candidate.w = w;
  candidate.lambda = lambda;
  candidate.mu = full_mu(mu_a);
  const NlpFirstOrder f = problem.first_order(w, theta);
  const double r = residual_at(f, candidate.lambda, candidate.mu);
  if (!(r <= residual)) return false;
  candidate.objective_value = f.objective;
  point = std::move(candidate);
  residual = r;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Interior-point solver

SolveReport solve_nlp(const NlpProblem& problem, const Vector& theta, const InitialGuess& init,
                      const SolverOptions& opts) {
  const Index n = problem.num_variables();
  const Index n_eq = problem.num_equalities();
  const Index n_in = problem.num_inequalities();
  require_dim(init.w.size(), n, "initial guess");
  require_dim(theta.size(), problem.num_parameters(), "parameter");
  const Layout layout = layout_of(problem);

  SolveReport report;
  report.point.theta = theta;

  Vector w = init.w;
  if (!w.allFinite()) {
    report.status = SolveStatus::kNumericalFailure;
    report.point.w = w;
    return report;
  }
  const bool warm = init.lambda.has_value() && init.mu.has_value();
  double barrier = warm ? opts.warm_mu_init : opts.mu_init;
  const double barrier_min = opts.tol / 10.0;

  NlpFirstOrder f = problem.first_order(w, theta);
  Vector lambda = init.lambda ? *init.lambda : Vector(Vector::Zero(n_eq));
  require_dim(lambda.size(), n_eq, "initial equality multipliers");
  Vector s(n_in);
  Vector z(n_in);
  {
    const double floor = warm ? std::min(1e-2, 10.0 * barrier) : 1e-2;
    for (Index i = 0; i < n_in; ++i) {
      s(i) = std::max(-f.ineq(i), floor * std::max(1.0, std::abs(f.ineq(i))));
    }
    z = (barrier / s.array()).matrix();
    if (init.mu) {
      require_dim(init.mu->size(), n_in, "initial inequality multipliers");
      z = z.cwiseMax(*init.mu);
    }
  }

  std::vector<Index> all_ineq(static_cast<std::size_t>(n_in));
  std::iota(all_ineq.begin(), all_ineq.end(), Index{0});
  KktFactor factor(n, layout.hinted ? layout.variable : std::vector<int>(),
                   row_stages(layout, n_eq, {}), n + n_eq <= kDenseLimit);

  double penalty = 1.0;
  double last_dw = 0.0;
  bool last_gn = false;
  report.status = SolveStatus::kMaxIterations;
  bool converged = false;

  auto barrier_objective = [&](double objective, const Vector& slack) {
    double m = objective;
    for (Index i = 0; i < slack.size(); ++i) m -= barrier * std::log(slack(i));
    return m;
  };
  auto violation = [&](const Vector& eq, const Vector& ineq, const Vector& slack) {
    double v = eq.size() > 0 ? eq.lpNorm<1>() : 0.0;
    if (ineq.size() > 0) v += (ineq + slack).lpNorm<1>();
    return v;
  };
  std::vector<std::pair<double, double>> filter;
  double filter_barrier = barrier;
  double theta_max = -1.0;
  double theta_min = 0.0;

  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    const double res = residual_at(f, lambda, z);
    if (!std::isfinite(res)) {
      report.status = SolveStatus::kNumericalFailure;
      break;
    }
    if (opts.verbose) {
      std::fprintf(stderr, "ipm %3d  J %+.6e  res %.3e  barrier %.2e  filter %3zu  dw %.1e%s\n",
                   iter, f.objective, res, barrier, filter.size(), last_dw, last_gn ? "  gn" : "");
    }
    if (res <= opts.tol) {
      converged = true;
      break;
    }

    Vector grad_l = f.objective_gradient;
    if (n_eq > 0) grad_l += f.eq_jacobian.transpose() * lambda;
    if (n_in > 0) grad_l += f.ineq_jacobian.transpose() * z;
    const Vector r_g = f.ineq + s;

    // Barrier update once the barrier subproblem is solved well enough.
    for (;;) {
      const double e_mu = std::max({inf_norm(grad_l), inf_norm(f.eq), inf_norm(r_g),
                                    n_in > 0 ? (s.cwiseProduct(z).array() - barrier).abs().maxCoeff()
                                             : 0.0});
      if (barrier <= barrier_min || e_mu > 10.0 * barrier) break;
      barrier = std::max(barrier_min, std::min(0.2 * barrier, std::pow(barrier, 1.5)));
    }
    if (barrier != filter_barrier) {
      filter.clear();
      filter_barrier = barrier;
    }

    const Vector sigma = z.cwiseQuotient(s);
    SparseMatrix barrier_term;
    if (n_in > 0) {
      barrier_term = SparseMatrix(f.ineq_jacobian.transpose() * sigma.asDiagonal() * f.ineq_jacobian);
    }
    auto with_barrier = [&](SparseMatrix h) {
      if (n_in > 0) h += barrier_term;
      return h;
    };
    SparseMatrix hess = with_barrier(problem.lagrangian_hessian(w, theta, lambda, z));
    Vector rhs(n + n_eq);
    const Vector slack_term = sigma.cwiseProduct(r_g) + (barrier / s.array()).matrix() - z;
    rhs.head(n) = -grad_l;
    if (n_in > 0) rhs.head(n) -= f.ineq_jacobian.transpose() * slack_term;
    rhs.tail(n_eq) = -f.eq;

    // Inertia correction. When the exact Hessian is not positive definite on
    // the constraint null space, the constraint curvature is dropped first
    // (Gauss-Newton), and only then is the diagonal shifted.
    double dw = 0.0;
    double dc = 0.0;
    bool ok = factor.factorize(hess, f.eq_jacobian, dw, dc);
    if (!ok && factor.zero_pivots() > 0 && n_eq > 0) {
      dc = 1e-8 * std::pow(barrier, 0.25);
      ok = factor.factorize(hess, f.eq_jacobian, dw, dc);
    }
    last_gn = false;
    if ((!ok || !factor.correct_inertia()) && opts.gauss_newton_fallback) {
      last_gn = true;
      hess = with_barrier(problem.lagrangian_hessian(w, theta, Vector::Zero(n_eq), Vector::Zero(n_in)));
      dc = 0.0;
      ok = factor.factorize(hess, f.eq_jacobian, dw, dc);
      if (!ok && factor.zero_pivots() > 0 && n_eq > 0) {
        dc = 1e-8 * std::pow(barrier, 0.25);
        ok = factor.factorize(hess, f.eq_jacobian, dw, dc);
      }
    }
    if (!ok || !factor.correct_inertia()) {
      dw = last_dw == 0.0 ? 1e-4 : std::max(1e-20, last_dw / 3.0);
      for (;;) {
        ok = factor.factorize(hess, f.eq_jacobian, dw, dc);
        if (ok && factor.correct_inertia()) break;
        if (!ok && factor.zero_pivots() > 0 && n_eq > 0 && dc == 0.0) {
          dc = 1e-8 * std::pow(barrier, 0.25);
          continue;
        }
        dw *= last_dw == 0.0 ? 100.0 : 8.0;
        if (dw > 1e40) break;
      }
      if (dw > 1e40) {
        if (opts.verbose) std::fprintf(stderr, "inertia correction failed\n");
        report.status = SolveStatus::kNumericalFailure;
        break;
      }
      last_dw = dw;
    }

    const Vector step = factor.solve(rhs);
    if (!step.allFinite()) {
      if (opts.verbose) std::fprintf(stderr, "non-finite Newton step\n");
      report.status = SolveStatus::kNumericalFailure;
      break;
    }
    const Vector d_w = step.head(n);
    const Vector d_lambda = step.tail(n_eq);
    Vector d_s(n_in);
    Vector d_z(n_in);
    if (n_in > 0) {
      d_s = -r_g - f.ineq_jacobian * d_w;
      d_z = (barrier / s.array()).matrix() - z - sigma.cwiseProduct(d_s);
    }

    // Fraction to the boundary.
    const double tau = std::max(0.99, 1.0 - barrier);
    auto max_step = [&](const Vector& v, const Vector& dv) {
      double a = 1.0;
      for (Index i = 0; i < v.size(); ++i) {
        if (dv(i) < 0.0) a = std::min(a, -tau * v(i) / dv(i));
      }
      return a;
    };
    const double alpha_s_max = max_step(s, d_s);
    const double alpha_z = max_step(z, d_z);

    // Filter line search on (violation, barrier objective); the l1 merit
    // function is the fallback when the filter rejects every trial.
    const double theta0 = violation(f.eq, f.ineq, s);
    const double phi0 = barrier_objective(f.objective, s);
    if (theta_max < 0.0) {
      theta_max = 1e4 * std::max(1.0, theta0);
      theta_min = 1e-4 * std::max(1.0, theta0);
    }
    double dphi = f.objective_gradient.dot(d_w);
    if (n_in > 0) dphi -= barrier * d_s.cwiseQuotient(s).sum();
    // Changes below this are round-off.
    const double noise = 1e2 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(phi0));
    bool f_type = false;

    auto filter_test = [&](double alpha, double phi_t, double theta_t) {
      if (theta_t > theta_max) return false;
      for (const auto& [ft, fp] : filter) {
        if (theta_t >= ft && phi_t >= fp) return false;
      }
      const bool switching = dphi < 0.0 && alpha * std::pow(-dphi, 2.3) > std::pow(theta0, 1.1);
      if (switching && theta0 <= theta_min) {
        f_type = true;
        return phi_t <= phi0 + 1e-4 * alpha * dphi + noise;
      }
      f_type = false;
      return theta_t <= (1.0 - 1e-5) * theta0 || phi_t <= phi0 - 1e-8 * theta0 + noise;
    };

    double merit0 = 0.0;
    double slope = 0.0;
    auto merit_test = [&](double alpha, double phi_t, double theta_t) {
      return phi_t + penalty * theta_t <= merit0 + 1e-8 * alpha * slope + noise;
    };

    double alpha = alpha_s_max;
    Vector w_trial;
    Vector s_trial;
    auto search = [&](const auto& test) {
      alpha = alpha_s_max;
      bool tried_soc = false;
      while (alpha >= 1e-14) {
        w_trial = w + alpha * d_w;
        s_trial = s + alpha * d_s;
        const NlpValues v = problem.values(w_trial, theta);
        if (std::isfinite(v.objective) && v.eq.allFinite() && v.ineq.allFinite()) {
          const double theta_t = violation(v.eq, v.ineq, s_trial);
          if (test(alpha, barrier_objective(v.objective, s_trial), theta_t)) return true;
          if (!tried_soc && alpha == alpha_s_max && theta_t >= theta0 && theta0 > 0.0) {
            // Second-order correction for curvature of the constraints.
            tried_soc = true;
            Vector rhs_soc = rhs;
            const Vector rg_soc = alpha * r_g + (v.ineq + s_trial);
            const Vector c_soc = alpha * f.eq + v.eq;
            const Vector slack_soc =
                sigma.cwiseProduct(rg_soc) + alpha * ((barrier / s.array()).matrix() - z);
            rhs_soc.head(n) = -alpha * grad_l;
            if (n_in > 0) rhs_soc.head(n) -= f.ineq_jacobian.transpose() * slack_soc;
            rhs_soc.tail(n_eq) = -c_soc;
            const Vector step_soc = factor.solve(rhs_soc);
            if (step_soc.allFinite()) {
              const Vector dw_soc = step_soc.head(n);
              Vector ds_soc(n_in);
              if (n_in > 0) ds_soc = -rg_soc - f.ineq_jacobian * dw_soc;
              const double a_soc = max_step(s, ds_soc);
              const Vector w_soc = w + a_soc * dw_soc;
              const Vector s_soc = s + a_soc * ds_soc;
              const NlpValues vs = problem.values(w_soc, theta);
              if (std::isfinite(vs.objective) && vs.eq.allFinite() && vs.ineq.allFinite() &&
                  test(alpha, barrier_objective(vs.objective, s_soc), violation(vs.eq, vs.ineq, s_soc))) {
                w_trial = w_soc;
                s_trial = s_soc;
                return true;
              }
            }
          }
        }
        alpha *= 0.5;
      }
      return false;
    };

    bool accepted = search(filter_test);
    if (accepted) {
      if (!f_type) filter.emplace_back((1.0 - 1e-5) * theta0, phi0 - 1e-8 * theta0);
    } else {
      if (theta0 > 0.0) {
        const double curvature = std::max(0.0, d_w.dot(hess * d_w) + dw * d_w.squaredNorm());
        const double needed = (dphi + 0.5 * curvature) / (0.9 * theta0);
        if (penalty < needed) penalty = needed + 1.0;
      }
      merit0 = phi0 + penalty * theta0;
      slope = std::min(dphi - penalty * theta0, 0.0);
      accepted = search(merit_test);
      if (accepted) filter.clear();
    }
    if (!accepted) {
      if (opts.verbose) {
        std::fprintf(stderr, "line search failed: phi %.17g dphi %.3e viol %.3e |dw| %.3e alpha_s %.3e\n",
                     phi0, dphi, theta0, d_w.norm(), alpha_s_max);
      }
      report.status = theta0 > opts.tol ? SolveStatus::kInfeasible : SolveStatus::kNumericalFailure;
      break;
    }

    w = w_trial;
    s = s_trial;
    lambda += alpha * d_lambda;
    if (n_in > 0) {
      z += alpha_z * d_z;
      // Keep the primal-dual barrier Hessian close to its primal counterpart.
      for (Index i = 0; i < n_in; ++i) {
        z(i) = std::clamp(z(i), barrier / (1e10 * s(i)), 1e10 * barrier / s(i));
      }
    }
    f = problem.first_order(w, theta);
  }
  report.iterations = iter;

  report.point.w = w;
  report.point.lambda = lambda;
  report.point.mu = z;
  report.point.objective_value = f.objective;
  report.residual = residual_at(f, lambda, z);
  if (!converged) {
    report.point.active_set = active_set(report.point, problem, opts.tol_act).indices;
    return report;
  }
  report.status = SolveStatus::kConverged;

  if (opts.polish && n_in + n_eq > 0) {
    std::vector<Index> active;
    for (Index i = 0; i < n_in; ++i) {
      if (z(i) > s(i)) active.push_back(i);
    }
    report.polished = polish_point(problem, theta, layout, active, report.point, report.residual);
  }
  report.point.active_set = active_set(report.point, problem, opts.tol_act).indices;
  return report;
}

KktPoint solve(const NlpProblem& problem, const Vector& theta, const InitialGuess& init,
               const SolverOptions& opts) {
  SolveReport r = solve_nlp(problem, theta, init, opts);
  if (r.status != SolveStatus::kConverged) {
    throw NlpError(r.status, "NLP solve failed: " + to_string(r.status) + " after " +
                                 std::to_string(r.iterations) + " iterations (residual " +
                                 std::to_string(r.residual) + ")");
  }
  return std::move(r.point);
}

double kkt_residual(const NlpProblem& problem, const KktPoint& point) {
  require_dim(point.w.size(), problem.num_variables(), "primal point");
  require_dim(point.lambda.size(), problem.num_equalities(), "equality multipliers");
  require_dim(point.mu.size(), problem.num_inequalities(), "inequality multipliers");
  return residual_at(problem.first_order(point.w, point.theta), point.lambda, point.mu);
}

ActiveSet active_set(const KktPoint& point, const NlpProblem& problem, double tol_act) {
  ActiveSet out;
  if (problem.num_inequalities() == 0) return out;
  const NlpValues v = problem.values(point.w, point.theta);
  for (Index i = 0; i < v.ineq.size(); ++i) {
    if (std::abs(v.ineq(i)) <= tol_act) {
      out.indices.push_back(i);
      if (point.mu(i) <= tol_act) out.weakly_active.push_back(i);
    }
  }
  return out;
}

Vector value_gradient(const NlpProblem& problem, const KktPoint& point) {
  const NlpParameterDerivatives d =
      problem.parameter_derivatives(point.w, point.theta, point.lambda, point.mu);
  Vector g = d.objective;
  if (d.eq.rows() > 0) g += d.eq.transpose() * point.lambda;
  if (d.ineq.rows() > 0) g += d.ineq.transpose() * point.mu;
  return g;
}

SolutionSensitivity solution_sensitivity(const NlpProblem& problem, const KktPoint& point,
                                         double tol_act) {
  const ActiveSet act = active_set(point, problem, tol_act);
  if (!act.strictly_complementary()) {
    throw SensitivityError(SensitivityError::Kind::kWeakActivity,
                           "weakly active constraint: strict complementarity fails");
  }
  const Index n = problem.num_variables();
  const Index n_eq = problem.num_equalities();
  const auto n_a = static_cast<Index>(act.indices.size());
  const Index total = n + n_eq + n_a;

  const NlpFirstOrder f = problem.first_order(point.w, point.theta);
  const SparseMatrix hess = problem.lagrangian_hessian(point.w, point.theta, point.lambda, point.mu);
  const SparseMatrix g_a = select_rows(f.ineq_jacobian, act.indices);
  const NlpParameterDerivatives d =
      problem.parameter_derivatives(point.w, point.theta, point.lambda, point.mu);
  const Index q = problem.num_parameters();

  Matrix rhs(total, q);
  rhs.topRows(n) = -d.lagrangian_mixed;
  if (n_eq > 0) rhs.middleRows(n, n_eq) = -d.eq;
  for (Index i = 0; i < n_a; ++i) rhs.row(n + n_eq + i) = -d.ineq.row(act.indices[static_cast<std::size_t>(i)]);

  std::vector<Triplet> trip;
  for (Index k = 0; k < hess.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(hess, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
  }
  const SparseMatrix jac = stack_rows(f.eq_jacobian, g_a);
  for (Index k = 0; k < jac.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(jac, k); it; ++it) {
      trip.emplace_back(n + it.row(), it.col(), it.value());
      trip.emplace_back(it.col(), n + it.row(), it.value());
    }
  }
  SparseMatrix kkt(total, total);
  kkt.setFromTriplets(trip.begin(), trip.end());

  SolutionSensitivity out;
  out.n_w = n;
  out.n_eq = n_eq;
  out.active_set = act.indices;
  if (total <= 400) {
    Eigen::FullPivLU<Matrix> lu{Matrix(kkt)};
    lu.setThreshold(1e-11);
    if (!lu.isInvertible()) {
      throw SensitivityError(SensitivityError::Kind::kSingularKkt,
                             "KKT matrix is singular: constraint qualification or second-order "
                             "sufficiency fails");
    }
    out.ds_dtheta = lu.solve(rhs);
  } else {
    kkt.makeCompressed();
    Eigen::SparseLU<SparseMatrix> lu;
    lu.compute(kkt);
    if (lu.info() != Eigen::Success) {
      throw SensitivityError(SensitivityError::Kind::kSingularKkt, "KKT matrix is singular");
    }
    out.ds_dtheta = lu.solve(rhs);
    const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
    if (!out.ds_dtheta.allFinite() ||
        (Matrix(kkt * out.ds_dtheta) - rhs).cwiseAbs().maxCoeff() > 1e-8 * scale) {
      throw SensitivityError(SensitivityError::Kind::kSingularKkt, "KKT matrix is singular");
    }
  }
  out.dV_dtheta = d.objective;
  if (n_eq > 0) out.dV_dtheta += d.eq.transpose() * point.lambda;
  if (d.ineq.rows() > 0) out.dV_dtheta += d.ineq.transpose() * point.mu;
  return out;
}

KktPoint predict_solution(const KktPoint& point, const SolutionSensitivity& sens,
                          const Vector& dtheta) {
  require_dim(dtheta.size(), sens.ds_dtheta.cols(), "parameter step");
  KktPoint out = point;
  out.theta = point.theta + dtheta;
  const Vector ds = sens.ds_dtheta * dtheta;
  out.w += ds.head(sens.n_w);
  out.lambda += ds.segment(sens.n_w, sens.n_eq);
  for (std::size_t i = 0; i < sens.active_set.size(); ++i) {
    out.mu(sens.active_set[i]) += ds(sens.n_w + sens.n_eq + static_cast<Index>(i));
  }
  return out;
}

}  // namespace banmpc
