#include "banmpc/safety.hpp"

#include "banmpc/dynamics.hpp"

#include <algorithm>

namespace banmpc {

namespace {

Vector interpolate_waypoints(const Waypoints& wp, double t) {
  if (t <= wp.times.front()) return wp.points.front();
  if (t >= wp.times.back()) return wp.points.back();
  const auto it = std::upper_bound(wp.times.begin(), wp.times.end(), t);
  const auto hi = static_cast<std::size_t>(it - wp.times.begin());
  const std::size_t lo = hi - 1;
  const double s = (t - wp.times[lo]) / (wp.times[hi] - wp.times[lo]);
  return (1.0 - s) * wp.points[lo] + s * wp.points[hi];
}

}  // namespace

Vector Obstacle::center_at(double t) const {
  if (!motion) return center;
  return std::visit(
      [&](const auto& m) -> Vector {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantVelocity>) {
          return center + m.velocity * t;
        } else {
          return interpolate_waypoints(m, t);
        }
      },
      *motion);
}

void Obstacle::validate() const {
  if (!(radius > 0.0)) throw std::invalid_argument("obstacle radius must be positive");
  if (!motion) return;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantVelocity>) {
          require_dim(m.velocity.size(), center.size(), "obstacle velocity");
        } else {
          if (m.times.empty() || m.times.size() != m.points.size()) {
            throw std::invalid_argument("waypoint motion needs matching, non-empty times and points");
          }
          for (std::size_t i = 0; i < m.points.size(); ++i) {
            require_dim(m.points[i].size(), center.size(), "obstacle waypoint");
            if (i > 0 && !(m.times[i] > m.times[i - 1])) {
              throw std::invalid_argument("waypoint times must be strictly increasing");
            }
          }
        }
      },
      *motion);
}

bool SafetySpec::is_static() const {
  return std::all_of(obstacles.begin(), obstacles.end(),
                     [](const Obstacle& o) { return o.is_static(); });
}

void SafetySpec::validate() const {
  if (!(rho > 0.0)) throw std::invalid_argument("soft-min sharpness rho must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(margin >= 0.0)) throw std::invalid_argument("safety margin must be nonnegative");
  if (!(robot_radius >= 0.0)) throw std::invalid_argument("robot radius must be nonnegative");
  for (const auto& o : obstacles) o.validate();
}

double obstacle_h(const Vector& pos, const Obstacle& obs, const SafetySpec& spec, double t) {
  require_dim(pos.size(), obs.center.size(), "position");
  return (pos - obs.center_at(t)).norm() - (obs.radius + spec.robot_radius + spec.margin);
}

double softmin_compose(const std::vector<double>& values, double rho) {
  return softmin_compose(Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())),
                         rho);
}

double composite_h(const Vector& pos, const SafetySpec& spec, double t) {
  Vector h(static_cast<Index>(spec.obstacles.size()));
  for (std::size_t q = 0; q < spec.obstacles.size(); ++q) {
    h(static_cast<Index>(q)) = obstacle_h(pos, spec.obstacles[q], spec, t);
  }
  return softmin_compose(h, spec.rho);
}

double composite_h(const DiscreteDynamics& dyn, const StateVector& x, const SafetySpec& spec,
                   double t) {
  return composite_h(dyn.position(x), spec, t);
}

BarrierEvaluation composite_h_derivatives(const Vector& pos, const SafetySpec& spec, double t) {
  const auto count = static_cast<Index>(spec.obstacles.size());
  if (count == 0) throw std::invalid_argument("no safety functions");
  const Index dim = pos.size();

  Vector h(count);
  Matrix normals(dim, count);
  Vector dist(count);
  for (Index q = 0; q < count; ++q) {
    const Obstacle& o = spec.obstacles[static_cast<std::size_t>(q)];
    require_dim(pos.size(), o.center.size(), "position");
    const Vector r = pos - o.center_at(t);
    dist(q) = std::max(r.norm(), 1e-12);
    normals.col(q) = r / dist(q);
    h(q) = dist(q) - (o.radius + spec.robot_radius + spec.margin);
  }

  BarrierEvaluation out;
  out.value = softmin_compose(h, spec.rho);
  // Soft-min weights are a softmax of -rho * h.
  Vector w = (-spec.rho * (h.array() - h.minCoeff())).exp();
  w /= w.sum();
  out.gradient = normals * w;
  out.hessian = Matrix::Zero(dim, dim);
  for (Index q = 0; q < count; ++q) {
    const Vector& n = normals.col(q);
    out.hessian += w(q) * ((Matrix::Identity(dim, dim) - n * n.transpose()) / dist(q) -
                           spec.rho * n * n.transpose());
  }
  out.hessian += spec.rho * out.gradient * out.gradient.transpose();
  return out;
}

double safety_value(const DiscreteDynamics& dyn, const StateVector& x, const SafetySpec& spec,
                    double t) {
  if (!spec.has_obstacles()) return std::numeric_limits<double>::infinity();
  return composite_h(dyn, x, spec, t);
}

double nearest_clearance(const Vector& pos, const SafetySpec& spec, double t) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : spec.obstacles) best = std::min(best, obstacle_h(pos, o, spec, t));
  return best;
}

}  // namespace banmpc
