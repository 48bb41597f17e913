#include <doctest.h>

#include "banmpc/dynamics.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace banmpc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

DiscreteDynamics unicycle(double dt = 0.1) {
  return {Unicycle{}, dt, ModelParams::nominal(Unicycle::default_params())};
}

DiscreteDynamics quadrotor(double dt = 0.02) {
  return {Quadrotor{}, dt, ModelParams::nominal(Quadrotor::default_params())};
}

Vector hover_state() {
  Vector x = Vector::Zero(13);
  x(3) = 1.0;
  return x;
}

Vector random_quad_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector x(13);
  for (Index i = 0; i < 13; ++i) x(i) = u(rng);
  x.segment<4>(3).normalize();
  return x;
}

}  // namespace

TEST_CASE("unicycle vector field") {
  const Vector theta = vec({1, 1});
  CHECK((unicycle_rhs(vec({0, 0, 0}), vec({0.26, 0}), theta) - vec({0.26, 0, 0})).norm() == 0.0);
  CHECK(unicycle_rhs(vec({1.3, -2, 0.7}), vec({0, 0}), theta).norm() == 0.0);
  const Vector d = unicycle_rhs(vec({0, 0, std::numbers::pi / 2}), vec({1, 0}), theta);
  CHECK(d(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(d(1) == doctest::Approx(1.0));
  CHECK(d(2) == 0.0);
}

TEST_CASE("unicycle vector field matches the direct formula") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const Vector theta = vec({1, 1});
  for (int i = 0; i < 1000; ++i) {
    const Vector x = vec({u(rng), u(rng), u(rng)});
    const Vector in = vec({u(rng), u(rng)});
    const Vector d = unicycle_rhs(x, in, theta);
    CHECK(d(0) == in(0) * std::cos(x(2)));
    CHECK(d(1) == in(0) * std::sin(x(2)));
    CHECK(d(2) == in(1));
  }
}

TEST_CASE("unicycle gains scale the input channels") {
  const Vector d = unicycle_rhs(vec({0, 0, 0}), vec({0.5, 0.2}), vec({1.5, 0.5}));
  CHECK(d(0) == doctest::Approx(0.75));
  CHECK(d(2) == doctest::Approx(0.1));
}

TEST_CASE("quadrotor hover and free fall") {
  const Vector theta = Quadrotor::default_params();
  const Vector hover = Quadrotor::hover_input(theta);
  const Vector d = quadrotor_rhs(hover_state(), hover, theta);
  CHECK(d.segment<3>(7).norm() <= 1e-12);
  CHECK(d.segment<3>(10).norm() <= 1e-12);

  const Vector fall = quadrotor_rhs(hover_state(), Vector::Zero(4), theta);
  CHECK(fall(7) == 0.0);
  CHECK(fall(8) == 0.0);
  CHECK(fall(9) == doctest::Approx(-9.81));
}

TEST_CASE("quadrotor roll torque sign") {
  const Vector theta = Quadrotor::default_params();
  const double t = 2.0;
  const Vector tau = Quadrotor::body_torque<double>(Quadrotor::Input<double>(t, t, 0, 0),
                                                    Quadrotor::Params<double>(theta));
  CHECK(tau(0) == doctest::Approx(-2.0 * theta(Quadrotor::kArmY) * t));
}

TEST_CASE("quadrotor thrust is divided by mass") {
  Vector theta = Quadrotor::default_params();
  theta(Quadrotor::kMass) = 1.2;
  const Vector u = Vector::Constant(4, 3.0);
  const Vector d = quadrotor_rhs(hover_state(), u, theta);
  CHECK(d(9) == doctest::Approx(12.0 / 1.2 - 9.81));
}

TEST_CASE("rk4 on the exponential test field") {
  auto field = [](const Eigen::Matrix<double, 1, 1>& x) -> Eigen::Matrix<double, 1, 1> { return -x; };
  const Eigen::Matrix<double, 1, 1> x0(1.0);
  CHECK(rk4(field, x0, 0.1)(0) == doctest::Approx(std::exp(-0.1)).epsilon(1e-6));
  CHECK(std::abs(rk4(field, x0, 0.1)(0) - 0.904837) <= 1e-6);

  double prev = 0.0;
  for (double dt : {0.1, 0.05, 0.025}) {
    const double err = std::abs(rk4(field, x0, dt)(0) - std::exp(-dt));
    if (prev > 0.0) CHECK(prev / err >= 24.0);
    prev = err;
  }
}

TEST_CASE("rk4 step of the unicycle") {
  const auto dyn = unicycle();
  const Vector next = rk4_step(dyn, vec({0, 0, 0}), vec({0.26, 0}));
  CHECK(next(0) == doctest::Approx(0.026).epsilon(1e-15));
  CHECK(next(1) == 0.0);
  CHECK(next(2) == 0.0);

  const Vector x = vec({0.4, -1.2, 2.0});
  CHECK(rk4_step(dyn, x, vec({0, 0})) == x);
}

TEST_CASE("unicycle heading stays wrapped") {
  const auto dyn = unicycle();
  Vector x = vec({0, 0, 3.1});
  for (int k = 0; k < 50; ++k) {
    x = rk4_step(dyn, x, vec({0.1, 1.0}));
    CHECK(x(2) > -std::numbers::pi);
    CHECK(x(2) <= std::numbers::pi);
  }
  CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
}

TEST_CASE("quadrotor quaternion stays normalized") {
  const auto dyn = quadrotor();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> thrust(0.0, 6.0);
  for (int i = 0; i < 200; ++i) {
    const Vector x = random_quad_state(rng);
    const Vector u = vec({thrust(rng), thrust(rng), thrust(rng), thrust(rng)});
    CHECK(std::abs(rk4_step(dyn, x, u).segment<4>(3).norm() - 1.0) <= 1e-9);
  }
}

TEST_CASE("quadrotor hover is an equilibrium of the discrete map") {
  const auto dyn = quadrotor();
  const Vector u = dyn.rest_input(dyn.params().theta);
  Vector x = hover_state();
  for (int k = 0; k < 100; ++k) x = rk4_step(dyn, x, u);
  CHECK(x.segment<3>(7).norm() <= 1e-9);
}

TEST_CASE("dynamics reject inconsistent dimensions and parameters") {
  const auto dyn = unicycle();
  CHECK_THROWS_AS(dyn.transition(vec({0, 0}), vec({0, 0}), vec({1, 1})), DimensionError);
  CHECK_THROWS_AS(dyn.transition(vec({0, 0, 0}), vec({0}), vec({1, 1})), DimensionError);
  CHECK_THROWS_AS(DiscreteDynamics(Unicycle{}, 0.0, ModelParams::nominal(vec({1, 1}))),
                  std::invalid_argument);
  CHECK_THROWS_AS(DiscreteDynamics(Unicycle{}, 0.1, ModelParams::nominal(vec({1, -1}))),
                  std::invalid_argument);
  CHECK_THROWS(model_from_name("bicycle"));
}

namespace {

// Central finite differences of the transition with respect to (x, u, theta).
Matrix fd_jacobian(const DiscreteDynamics& dyn, const Vector& z) {
  const Index nx = dyn.state_dim();
  const Index nu = dyn.input_dim();
  const Index nq = dyn.param_dim();
  auto f = [&](const Vector& v) {
    return dyn.transition(v.head(nx), v.segment(nx, nu), v.tail(nq));
  };
  Matrix j(nx, z.size());
  for (Index i = 0; i < z.size(); ++i) {
    Vector a = z, b = z;
    a(i) += 1e-6;
    b(i) -= 1e-6;
    j.col(i) = (f(a) - f(b)) / 2e-6;
  }
  return j;
}

}  // namespace

TEST_CASE("transition Jacobians match finite differences") {
  std::mt19937_64 rng(3);
  for (const auto& dyn : {unicycle(), quadrotor()}) {
    const Index nx = dyn.state_dim(), nu = dyn.input_dim(), nq = dyn.param_dim();
    for (int trial = 0; trial < 5; ++trial) {
      Vector x = dyn.system_name() == "quadrotor" ? random_quad_state(rng) : Vector(Vector::Random(nx));
      const Vector u = Vector::Random(nu).cwiseAbs() * 3.0;
      const Vector theta = dyn.params().theta;
      Vector z(nx + nu + nq);
      z << x, u, theta;
      const auto lin = dyn.linearize(x, u, theta);
      Matrix j(nx, nx + nu + nq);
      j << lin.jac_state, lin.jac_input, lin.jac_param;
      CHECK((j - fd_jacobian(dyn, z)).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK((lin.next - dyn.transition(x, u, theta)).norm() <= 1e-14);
    }
  }
}

TEST_CASE("weighted transition Hessians match differences of Jacobians") {
  std::mt19937_64 rng(5);
  for (const auto& dyn : {unicycle(), quadrotor()}) {
    const Index nx = dyn.state_dim(), nu = dyn.input_dim(), nq = dyn.param_dim();
    const Index nz = nx + nu + nq;
    const Vector x = dyn.system_name() == "quadrotor" ? random_quad_state(rng) : Vector(Vector::Random(nx));
    const Vector u = Vector::Random(nu).cwiseAbs() * 3.0;
    const Vector theta = dyn.params().theta;
    const Vector weights = Vector::Random(nx);

    auto weighted_grad = [&](const Vector& z) {
      const auto lin = dyn.linearize(z.head(nx), z.segment(nx, nu), z.tail(nq));
      Matrix j(nx, nz);
      j << lin.jac_state, lin.jac_input, lin.jac_param;
      return Vector(j.transpose() * weights);
    };
    Vector z(nz);
    z << x, u, theta;
    Matrix fd(nz, nz);
    for (Index i = 0; i < nz; ++i) {
      Vector a = z, b = z;
      a(i) += 1e-6;
      b(i) -= 1e-6;
      fd.col(i) = (weighted_grad(a) - weighted_grad(b)) / 2e-6;
    }
    const Matrix full = dyn.transition_hessian_with_params(x, u, theta, weights);
    CHECK((full - fd).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    const Matrix xu = dyn.transition_hessian(x, u, theta, weights);
    CHECK((xu - full.topLeftCorner(nx + nu, nx + nu)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("quadrotor attitude error map vanishes at the goal attitude") {
  const auto dyn = quadrotor();
  std::mt19937_64 rng(9);
  const Vector goal = random_quad_state(rng);
  const Matrix e = dyn.cost_error_map(goal);
  CHECK((e * (goal - goal)).norm() == 0.0);
  // A state with the goal attitude but different position has only position error.
  Vector x = goal;
  x.head<3>() += vec({1, 2, 3});
  const Vector err = e * (x - goal);
  CHECK(err.segment<4>(3).norm() <= 1e-14);
  CHECK(err.head<3>().isApprox(vec({1, 2, 3})));
}

TEST_CASE("goal heading is aligned with the start heading") {
  const auto dyn = unicycle();
  const Vector g = dyn.align_goal(vec({1, 1, -3.0}), vec({0, 0, 3.0}));
  CHECK(std::abs(g(2) - 3.0) <= std::numbers::pi);
  CHECK(wrap_angle(g(2) - (-3.0)) == doctest::Approx(0.0).epsilon(1e-12));
}
