#pragma once

// Test-only DenseNlp builder: objective and constraints are generic lambdas
// over (w, theta); all first and second derivatives come from nested Eigen
// AutoDiff over the stacked vector z = (w, theta).

#include "banmpc/parnlp.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <utility>
#include <vector>

namespace banmpc::testing {

using Inner = Eigen::AutoDiffScalar<Vector>;
using Outer = Eigen::AutoDiffScalar<Eigen::Matrix<Inner, Eigen::Dynamic, 1>>;
using OuterVec = Eigen::Matrix<Outer, Eigen::Dynamic, 1>;

// Value, gradient and Hessian of every output of fn at z.
struct Taylor2 {
  Vector value;
  std::vector<Vector> grad;
  std::vector<Matrix> hess;
};

template <typename Fn>
Taylor2 expand(const Fn& fn, const Vector& w, const Vector& theta) {
  const Index n = w.size() + theta.size();
  OuterVec z(n);
  for (Index i = 0; i < n; ++i) {
    const double v = i < w.size() ? w(i) : theta(i - w.size());
    Inner inner(v, n, i);
    z(i).value() = inner;
    z(i).derivatives() = Eigen::Matrix<Inner, Eigen::Dynamic, 1>::Zero(n);
    for (Index j = 0; j < n; ++j) z(i).derivatives()(j).derivatives() = Vector::Zero(n);
    z(i).derivatives()(i) = Inner(1.0, Vector::Zero(n));
  }
  const OuterVec out = fn(OuterVec(z.head(w.size())), OuterVec(z.tail(theta.size())));
  Taylor2 t;
  t.value.resize(out.size());
  for (Index k = 0; k < out.size(); ++k) {
    t.value(k) = out(k).value().value();
    Vector g(n);
    Matrix h(n, n);
    for (Index i = 0; i < n; ++i) {
      g(i) = out(k).derivatives()(i).value();
      const Vector& row = out(k).derivatives()(i).derivatives();
      if (row.size() == n) h.row(i) = row.transpose();
      else h.row(i).setZero();
    }
    t.grad.push_back(g);
    t.hess.push_back(h);
  }
  return t;
}

/// obj(w, t) returns a scalar; eq and ineq return vectors (possibly empty).
template <typename Obj, typename Eq, typename Ineq>
DenseNlp auto_nlp(Index n_w, Index n_theta, Index n_eq, Index n_ineq, Obj obj, Eq eq, Ineq ineq) {
  auto obj_vec = [obj](const OuterVec& w, const OuterVec& t) {
    OuterVec v(1);
    v(0) = obj(w, t);
    return v;
  };
  auto tw = [n_w](const Taylor2& t, Index k) { return Vector(t.grad[static_cast<std::size_t>(k)].head(n_w)); };
  auto tt = [n_w](const Taylor2& t, Index k) { return Vector(t.grad[static_cast<std::size_t>(k)].tail(t.grad[0].size() - n_w)); };
  auto hww = [n_w](const Taylor2& t, Index k) { return Matrix(t.hess[static_cast<std::size_t>(k)].topLeftCorner(n_w, n_w)); };
  auto hwt = [n_w](const Taylor2& t, Index k) {
    const Matrix& h = t.hess[static_cast<std::size_t>(k)];
    return Matrix(h.topRightCorner(n_w, h.cols() - n_w));
  };
  auto jac = [](const Taylor2& t, auto part) {
    Matrix j(static_cast<Index>(t.grad.size()), part(t, 0).size());
    for (Index k = 0; k < j.rows(); ++k) j.row(k) = part(t, k).transpose();
    return j;
  };
  auto mats = [](const Taylor2& t, auto part) {
    std::vector<Matrix> out;
    for (Index k = 0; k < static_cast<Index>(t.grad.size()); ++k) out.push_back(part(t, k));
    return out;
  };

  DenseNlpCallbacks cb;
  cb.n_w = n_w;
  cb.n_theta = n_theta;
  cb.n_eq = n_eq;
  cb.n_ineq = n_ineq;
  cb.objective = [=](const Vector& w, const Vector& t) { return expand(obj_vec, w, t).value(0); };
  cb.objective_gradient = [=](const Vector& w, const Vector& t) { return tw(expand(obj_vec, w, t), 0); };
  cb.objective_hessian = [=](const Vector& w, const Vector& t) { return hww(expand(obj_vec, w, t), 0); };
  cb.objective_theta_gradient = [=](const Vector& w, const Vector& t) { return tt(expand(obj_vec, w, t), 0); };
  cb.objective_mixed_hessian = [=](const Vector& w, const Vector& t) { return hwt(expand(obj_vec, w, t), 0); };
  if (n_eq > 0) {
    cb.eq = [=](const Vector& w, const Vector& t) { return expand(eq, w, t).value; };
    cb.eq_jacobian = [=](const Vector& w, const Vector& t) { return jac(expand(eq, w, t), tw); };
    cb.eq_hessians = [=](const Vector& w, const Vector& t) { return mats(expand(eq, w, t), hww); };
    cb.eq_theta_jacobian = [=](const Vector& w, const Vector& t) { return jac(expand(eq, w, t), tt); };
    cb.eq_mixed_hessians = [=](const Vector& w, const Vector& t) { return mats(expand(eq, w, t), hwt); };
  }
  if (n_ineq > 0) {
    cb.ineq = [=](const Vector& w, const Vector& t) { return expand(ineq, w, t).value; };
    cb.ineq_jacobian = [=](const Vector& w, const Vector& t) { return jac(expand(ineq, w, t), tw); };
    cb.ineq_hessians = [=](const Vector& w, const Vector& t) { return mats(expand(ineq, w, t), hww); };
    cb.ineq_theta_jacobian = [=](const Vector& w, const Vector& t) { return jac(expand(ineq, w, t), tt); };
    cb.ineq_mixed_hessians = [=](const Vector& w, const Vector& t) { return mats(expand(ineq, w, t), hwt); };
  }
  return DenseNlp(cb);
}

/// Placeholder for problems without equalities or inequalities.
inline auto none() {
  return [](const OuterVec&, const OuterVec&) { return OuterVec(0); };
}

}  // namespace banmpc::testing
