#pragma once

// Distance-based safety functions for circular (2-D) and spherical (3-D)
// obstacles, their log-sum-exp soft-min composition and the discrete control
// barrier residual.

#include "banmpc/types.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

namespace banmpc {

class DiscreteDynamics;

/// Obstacle center moving as center + velocity * t.
struct ConstantVelocity {
  Vector velocity;
};

/// Obstacle center following straight segments between timed waypoints. The
/// center is held at the first point before times.front() and at the last
/// point after times.back().
struct Waypoints {
  std::vector<double> times;
  std::vector<Vector> points;
};

using ObstacleMotion = std::variant<ConstantVelocity, Waypoints>;

struct Obstacle {
  Vector center;
  double radius = 0.0;
  std::optional<ObstacleMotion> motion;

  bool is_static() const { return !motion.has_value(); }
  Vector center_at(double t) const;
  void validate() const;
};

struct SafetySpec {
  std::vector<Obstacle> obstacles;
  double robot_radius = 0.0;
  double margin = 0.03;
  double rho = 20.0;
  double gamma = 0.3;

  bool has_obstacles() const { return !obstacles.empty(); }
  bool is_static() const;
  void validate() const;
};

/// Signed clearance between a position and the inflated obstacle boundary.
double obstacle_h(const Vector& pos, const Obstacle& obs, const SafetySpec& spec, double t);

/// -(1/rho) log sum exp(-rho v), evaluated with a shift by min(v).
template <typename Derived>
typename Derived::Scalar softmin_compose(const Eigen::DenseBase<Derived>& values, double rho) {
  using Scalar = typename Derived::Scalar;
  using std::exp;
  using std::log;
  if (values.size() == 0) throw std::invalid_argument("no safety functions");
  if (!(rho > 0.0)) throw std::invalid_argument("soft-min sharpness must be positive");
  const Scalar lo = values.minCoeff();
  Scalar sum(0.0);
  for (Index i = 0; i < values.size(); ++i) sum += exp(Scalar(-rho) * (values(i) - lo));
  return lo - log(sum) / Scalar(rho);
}

double softmin_compose(const std::vector<double>& values, double rho);

/// Composite safety value with first and second derivatives in the position.
struct BarrierEvaluation {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// Soft-min of all per-obstacle clearances at time t.
double composite_h(const Vector& pos, const SafetySpec& spec, double t);
double composite_h(const DiscreteDynamics& dyn, const StateVector& x, const SafetySpec& spec,
                   double t);
BarrierEvaluation composite_h_derivatives(const Vector& pos, const SafetySpec& spec, double t);

/// composite_h, or +infinity when the scene has no obstacles.
double safety_value(const DiscreteDynamics& dyn, const StateVector& x, const SafetySpec& spec,
                    double t);

/// Distance from a position to the nearest inflated obstacle boundary
/// (hard minimum, +infinity without obstacles).
double nearest_clearance(const Vector& pos, const SafetySpec& spec, double t);

/// (h_next - h) + gamma * h; nonnegative when the barrier condition holds.
inline double cbf_residual(double h, double h_next, double gamma) {
  return (h_next - h) + gamma * h;
}

}  // namespace banmpc
