#include <doctest.h>

#include "banmpc/valuenet.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace banmpc;

namespace {

MlpNetwork random_net(std::mt19937_64& rng, std::vector<Index> dims) {
  std::normal_distribution<double> nrm(0.0, 0.7);
  MlpNetwork net(std::move(dims));
  for (Index l = 0; l < net.num_layers(); ++l) {
    for (Index r = 0; r < net.weight(l).rows(); ++r) {
      for (Index c = 0; c < net.weight(l).cols(); ++c) net.weight(l)(r, c) = nrm(rng);
      net.bias(l)(r) = nrm(rng);
    }
  }
  Vector mean(net.input_dim()), scale(net.input_dim());
  for (Index i = 0; i < mean.size(); ++i) {
    mean(i) = nrm(rng);
    scale(i) = 0.5 + std::abs(nrm(rng));
  }
  net.set_input_normalizer(mean, scale);
  Vector om(net.output_dim()), os(net.output_dim());
  for (Index i = 0; i < om.size(); ++i) {
    om(i) = nrm(rng);
    os(i) = 0.5 + std::abs(nrm(rng));
  }
  net.set_output_normalizer(om, os);
  return net;
}

Vector random_vec(std::mt19937_64& rng, Index n) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

TrainingSet square_norm_set(Index count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TrainingSet d;
  d.inputs.resize(2, count);
  d.targets.resize(1, count);
  for (Index i = 0; i < count; ++i) {
    d.inputs(0, i) = u(rng);
    d.inputs(1, i) = u(rng);
    d.targets(0, i) = d.inputs.col(i).squaredNorm();
  }
  return d;
}

}  // namespace

TEST_CASE("forward pass examples") {
  MlpNetwork zero({3, 8, 8, 1});
  zero.bias(2)(0) = 0.75;
  CHECK(zero.forward(Vector::Random(3))(0) == 0.75);
  CHECK(zero.forward(Vector::Zero(3))(0) == 0.75);

  MlpNetwork unit({1, 1, 1});
  unit.weight(0)(0, 0) = 1.0;
  unit.weight(1)(0, 0) = 1.0;
  unit.bias(1)(0) = -0.3;
  CHECK(unit.forward(Vector::Zero(1))(0) == -0.3);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    MlpNetwork net = random_net(rng, {4, 16, 16, 1});
    net.set_output_normalizer(Vector::Zero(1), Vector::Ones(1));
    const double y = net.forward(random_vec(rng, 4) * 10.0)(0);
    CHECK(std::isfinite(y));
    CHECK(std::abs(y) <= net.weight(2).cwiseAbs().sum() + std::abs(net.bias(2)(0)) + 1e-12);
  }
  CHECK_THROWS_AS(zero.forward(Vector::Zero(2)), DimensionError);
}

TEST_CASE("batched forward agrees with single-sample forward") {
  std::mt19937_64 rng(2);
  const MlpNetwork net = random_net(rng, {3, 10, 10, 2});
  Matrix xs(3, 7);
  for (Index i = 0; i < 7; ++i) xs.col(i) = random_vec(rng, 3);
  const Matrix ys = net.forward_batch(xs);
  for (Index i = 0; i < 7; ++i) CHECK((ys.col(i) - net.forward(xs.col(i))).norm() <= 1e-13);
}

TEST_CASE("input Jacobian") {
  MlpNetwork zero({3, 8, 8, 2});
  CHECK(zero.grad_input(Vector::Random(3)).isZero(0.0));

  MlpNetwork linear({3, 2});
  linear.weight(0) << 1, 2, 3, 4, 5, 6;
  Vector scale(3);
  scale << 2, 4, 0.5;
  linear.set_input_normalizer(Vector::Zero(3), scale);
  const Matrix expected = linear.weight(0) * scale.cwiseInverse().asDiagonal();
  CHECK((linear.grad_input(Vector::Random(3)) - expected).norm() <= 1e-15);
}

TEST_CASE("input Jacobian and Hessian match central differences") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> width(2, 12);
  std::uniform_int_distribution<int> depth(1, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Index> dims{static_cast<Index>(width(rng) % 5 + 1)};
    const int hidden = depth(rng);
    for (int h = 0; h < hidden; ++h) dims.push_back(width(rng));
    dims.push_back(static_cast<Index>(width(rng) % 3 + 1));
    const MlpNetwork net = random_net(rng, dims);
    const Vector x = random_vec(rng, net.input_dim());
    const Matrix j = net.grad_input(x);
    Matrix fd(net.output_dim(), net.input_dim());
    for (Index i = 0; i < net.input_dim(); ++i) {
      Vector a = x, b = x;
      a(i) += 1e-6;
      b(i) -= 1e-6;
      fd.col(i) = (net.forward(a) - net.forward(b)) / 2e-6;
    }
    CHECK((j - fd).norm() <= 1e-5 * std::max(j.norm(), 1e-3));

    const Vector w = random_vec(rng, net.output_dim());
    const Matrix h = net.hessian_input(x, w);
    Matrix hfd(net.input_dim(), net.input_dim());
    for (Index i = 0; i < net.input_dim(); ++i) {
      Vector a = x, b = x;
      a(i) += 1e-5;
      b(i) -= 1e-5;
      hfd.col(i) = (net.grad_input(a).transpose() * w - net.grad_input(b).transpose() * w) / 2e-5;
    }
    CHECK((h - hfd).norm() <= 1e-5 * std::max(h.norm(), 1e-2));
    CHECK((h - h.transpose()).norm() <= 1e-12 * std::max(1.0, h.norm()));
  }
}

TEST_CASE("training fits a known quadratic") {
  const TrainingSet data = square_norm_set(5000, 17);
  MlpNetwork net = MlpNetwork::initialized({2, 32, 32, 32, 1}, 5);
  TrainOptions opts;
  opts.epochs = 150;
  opts.seed = 9;
  opts.learning_rate = 3e-3;
  opts.final_learning_rate = 3e-4;
  const TrainHistory h = train(net, data, opts);
  CHECK(h.best_validation <= 1e-3);
  CHECK(h.train_loss.back() <= h.initial_train_loss);
  CHECK(static_cast<int>(h.validation_loss.size()) == opts.epochs);
  double best = 1e300;
  for (double v : h.validation_loss) best = std::min(best, v);
  CHECK(h.best_validation == best);
  CHECK(h.validation_loss[static_cast<std::size_t>(h.best_epoch)] == best);
}

TEST_CASE("training with pre-normalized data gives the same accuracy") {
  const TrainingSet data = square_norm_set(2000, 23);
  TrainOptions opts;
  opts.epochs = 60;
  opts.seed = 4;
  opts.learning_rate = 3e-3;
  opts.final_learning_rate = 3e-4;

  MlpNetwork with = MlpNetwork::initialized({2, 32, 32, 32, 1}, 8);
  const TrainHistory hw = train(with, data, opts);

  // Standardize by hand with the statistics fitted on the training split.
  const Vector im = with.input_mean();
  const Vector is = with.input_scale();
  const double tm = with.output_mean()(0);
  const double ts = with.output_scale()(0);
  TrainingSet pre;
  pre.inputs = is.cwiseInverse().asDiagonal() * (data.inputs.colwise() - im);
  pre.targets = (data.targets.array() - tm) / ts;
  MlpNetwork without = MlpNetwork::initialized({2, 32, 32, 32, 1}, 8);
  TrainOptions raw = opts;
  raw.fit_normalizers = false;
  const TrainHistory hp = train(without, pre, raw);
  const double val_pre = hp.best_validation * ts * ts;
  CHECK(std::abs(val_pre - hw.best_validation) <= 0.1 * hw.best_validation);
}

TEST_CASE("zero targets are learned exactly") {
  TrainingSet data = square_norm_set(1000, 2);
  data.targets.setZero();
  MlpNetwork net = MlpNetwork::initialized({2, 16, 16, 1}, 1);
  TrainOptions opts;
  opts.epochs = 20;
  const TrainHistory h = train(net, data, opts);
  CHECK(mse(net, data) <= 1e-6);
  CHECK(h.best_validation <= 1e-6);
}

TEST_CASE("training is deterministic") {
  const TrainingSet data = square_norm_set(600, 3);
  TrainOptions opts;
  opts.epochs = 10;
  opts.batch = 64;
  opts.seed = 77;
  MlpNetwork a = MlpNetwork::initialized({2, 16, 16, 1}, 3);
  MlpNetwork b = MlpNetwork::initialized({2, 16, 16, 1}, 3);
  const TrainHistory ha = train(a, data, opts);
  const TrainHistory hb = train(b, data, opts);
  CHECK(ha.train_loss == hb.train_loss);
  CHECK(ha.validation_loss == hb.validation_loss);
  CHECK(a == b);
}

TEST_CASE("divergent training raises") {
  const TrainingSet data = square_norm_set(300, 3);
  MlpNetwork net = MlpNetwork::initialized({2, 8, 1}, 3);
  TrainOptions opts;
  opts.epochs = 5;
  opts.learning_rate = 1e300;
  opts.final_learning_rate = 1e300;
  CHECK_THROWS_AS(train(net, data, opts), NonFiniteLoss);
}

TEST_CASE("mixing value functions") {
  MlpNetwork two({2, 4, 1});
  two.bias(1)(0) = 2.0;
  MlpNetwork four({2, 4, 1});
  four.bias(1)(0) = 4.0;
  const Vector x = Vector::Random(2);
  CHECK(mix_values(two, four, 0.5)->value(x) == 3.0);
  CHECK(mix_values(two, four, 1.0)->value(x) == 2.0);
  CHECK(mix_values(two, four, 0.0)->value(x) == 4.0);

  std::mt19937_64 rng(5);
  const MlpNetwork a = random_net(rng, {3, 8, 8, 1});
  const MlpNetwork b = random_net(rng, {3, 6, 5, 1});
  for (double beta : {0.0, 0.3, 1.0}) {
    const auto m = mix_values(a, b, beta);
    for (int i = 0; i < 10; ++i) {
      const Vector y = random_vec(rng, 3);
      const Vector g = beta * a.grad_input(y).row(0).transpose() +
                       (1.0 - beta) * b.grad_input(y).row(0).transpose();
      CHECK((m->gradient(y) - g).norm() <= 1e-14 * std::max(1.0, g.norm()));
    }
  }
  CHECK_THROWS(mix_values(a, b, 1.5));
}

TEST_CASE("merged network reproduces the mixture") {
  std::mt19937_64 rng(6);
  const MlpNetwork a = random_net(rng, {3, 8, 8, 1});
  const MlpNetwork b = random_net(rng, {3, 6, 5, 1});
  const MlpNetwork m = merge_networks(a, b, 0.25);
  const auto mix = mix_values(a, b, 0.25);
  for (int i = 0; i < 20; ++i) {
    const Vector x = random_vec(rng, 3);
    CHECK(m.forward(x)(0) == doctest::Approx(mix->value(x)).epsilon(1e-12));
    CHECK((m.grad_input(x).row(0).transpose() - mix->gradient(x)).norm() <= 1e-11);
  }
}

TEST_CASE("network files round-trip bit-exactly") {
  std::mt19937_64 rng(8);
  const MlpNetwork net = random_net(rng, {5, 7, 3, 2});
  std::stringstream ss;
  write_network(ss, net);
  const MlpNetwork back = read_network(ss);
  CHECK(back == net);

  std::stringstream bad("banmpc-mlp 9\n");
  CHECK_THROWS(read_network(bad));
}

TEST_CASE("adaptive value") {
  std::mt19937_64 rng(10);
  auto v = std::make_shared<const MlpNetwork>(random_net(rng, {3, 8, 1}));
  auto s = std::make_shared<const MlpNetwork>(random_net(rng, {3, 8, 2}));
  Vector nom(2);
  nom << 1.0, 1.0;
  const Vector x = random_vec(rng, 3);
  const AdaptiveValue at_nominal(v, s, nom, nom);
  CHECK(at_nominal.value(x) == v->forward(x)(0));

  auto zero_sens = std::make_shared<const MlpNetwork>(MlpNetwork({3, 8, 2}));
  Vector theta(2);
  theta << 1.1, 0.9;
  const AdaptiveValue no_sens(v, zero_sens, theta, nom);
  CHECK(no_sens.value(x) == doctest::Approx(v->forward(x)(0)).epsilon(1e-15));

  const AdaptiveValue adapted(v, s, theta, nom);
  CHECK(adapted.value(x) ==
        doctest::Approx(v->forward(x)(0) + s->forward(x).dot(theta - nom)).epsilon(1e-14));
  Vector fd(3);
  for (Index i = 0; i < 3; ++i) {
    Vector a = x, b = x;
    a(i) += 1e-6;
    b(i) -= 1e-6;
    fd(i) = (adapted.value(a) - adapted.value(b)) / 2e-6;
  }
  CHECK((adapted.gradient(x) - fd).norm() <= 1e-6);
}
