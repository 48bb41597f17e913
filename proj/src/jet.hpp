#pragma once

// Second-order forward-mode number: value, gradient and Hessian with respect
// to N seeded variables. Cheaper than nesting first-order AutoDiff scalars
// because the Hessian is propagated directly.

#include <Eigen/Core>

#include <cmath>

namespace banmpc::detail {

template <int N>
struct Jet2 {
  using Grad = Eigen::Matrix<double, N, 1>;
  using Hess = Eigen::Matrix<double, N, N>;

  double v = 0.0;
  Grad g = Grad::Zero();
  Hess h = Hess::Zero();
  // Known to have zero derivatives; products with constants skip the Hessian outer product.
  bool constant = true;

  Jet2() = default;
  Jet2(double value) : v(value) {}  // NOLINT: implicit constants
  static Jet2 variable(double value, int index) {
    Jet2 j(value);
    j.g(index) = 1.0;
    j.constant = false;
    return j;
  }
  static Jet2 scaled(double s, const Jet2& a) {
    Jet2 r;
    r.v = s * a.v;
    r.g = s * a.g;
    r.h = s * a.h;
    r.constant = a.constant;
    return r;
  }

  // f(v) with first and second derivatives d1, d2.
  Jet2 chain(double value, double d1, double d2) const {
    if (constant) return Jet2(value);
    Jet2 r;
    r.constant = false;
    r.v = value;
    r.g = d1 * g;
    r.h = d1 * h + d2 * g * g.transpose();
    return r;
  }

  Jet2& operator+=(const Jet2& o) {
    v += o.v;
    if (o.constant) return *this;
    g += o.g;
    h += o.h;
    constant = false;
    return *this;
  }
  Jet2& operator-=(const Jet2& o) {
    v -= o.v;
    if (o.constant) return *this;
    g -= o.g;
    h -= o.h;
    constant = false;
    return *this;
  }
  Jet2& operator*=(const Jet2& o) { return *this = *this * o; }
  Jet2& operator/=(const Jet2& o) { return *this = *this / o; }

  friend Jet2 operator+(Jet2 a, const Jet2& b) { return a += b; }
  friend Jet2 operator-(Jet2 a, const Jet2& b) { return a -= b; }
  friend Jet2 operator-(const Jet2& a) { return scaled(-1.0, a); }
  friend Jet2 operator*(const Jet2& a, const Jet2& b) {
    if (a.constant) return scaled(a.v, b);
    if (b.constant) return scaled(b.v, a);
    Jet2 r;
    r.constant = false;
    r.v = a.v * b.v;
    r.g = a.v * b.g + b.v * a.g;
    const Hess cross = a.g * b.g.transpose();
    r.h = a.v * b.h + b.v * a.h + cross + cross.transpose();
    return r;
  }
  friend Jet2 operator/(const Jet2& a, const Jet2& b) {
    const double inv = 1.0 / b.v;
    if (b.constant) return scaled(inv, a);
    return a * b.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
  }

  friend bool operator<(const Jet2& a, const Jet2& b) { return a.v < b.v; }
  friend bool operator>(const Jet2& a, const Jet2& b) { return a.v > b.v; }
  friend bool operator==(const Jet2& a, const Jet2& b) { return a.v == b.v; }
};

template <int N>
Jet2<N> sqrt(const Jet2<N>& a) {
  const double s = std::sqrt(a.v);
  return a.chain(s, 0.5 / s, -0.25 / (s * a.v));
}
template <int N>
Jet2<N> sin(const Jet2<N>& a) {
  const double s = std::sin(a.v);
  return a.chain(s, std::cos(a.v), -s);
}
template <int N>
Jet2<N> cos(const Jet2<N>& a) {
  const double c = std::cos(a.v);
  return a.chain(c, -std::sin(a.v), -c);
}

}  // namespace banmpc::detail

namespace Eigen {

template <int N>
struct NumTraits<banmpc::detail::Jet2<N>> : NumTraits<double> {
  using Real = banmpc::detail::Jet2<N>;
  using NonInteger = Real;
  using Nested = Real;
  using Literal = Real;
  enum { IsComplex = 0, RequireInitialization = 1, ReadCost = 1, AddCost = N * N, MulCost = 3 * N * N };
};

}  // namespace Eigen
