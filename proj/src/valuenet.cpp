#include "banmpc/valuenet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace banmpc {

namespace {

Vector tanh_prime_from_activation(const Vector& a) { return (1.0 - a.array().square()).matrix(); }

// Fills a matrix from a uniform distribution with an explicit draw order so
// results do not depend on Eigen's evaluation order.
void fill_uniform(Matrix& m, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
}

}  // namespace

MlpNetwork::MlpNetwork(std::vector<Index> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw std::invalid_argument("network needs at least input and output layers");
  for (Index d : dims_) {
    if (d < 1) throw std::invalid_argument("network layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    weights_.push_back(Matrix::Zero(dims_[l + 1], dims_[l]));
    biases_.push_back(Vector::Zero(dims_[l + 1]));
  }
  in_mean_ = Vector::Zero(input_dim());
  in_scale_ = Vector::Ones(input_dim());
  out_mean_ = Vector::Zero(output_dim());
  out_scale_ = Vector::Ones(output_dim());
}

MlpNetwork MlpNetwork::initialized(std::vector<Index> dims, std::uint64_t seed) {
  MlpNetwork net(std::move(dims));
  std::mt19937_64 rng(seed);
  for (Index l = 0; l + 1 < net.num_layers(); ++l) {
    Matrix& w = net.weight(l);
    fill_uniform(w, std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols())), rng);
  }
  return net;
}

void MlpNetwork::set_input_normalizer(Vector mean, Vector scale) {
  require_dim(mean.size(), input_dim(), "input normalizer mean");
  require_dim(scale.size(), input_dim(), "input normalizer scale");
  if ((scale.array() <= 0.0).any()) throw std::invalid_argument("normalizer scales must be positive");
  in_mean_ = std::move(mean);
  in_scale_ = std::move(scale);
}

void MlpNetwork::set_output_normalizer(Vector mean, Vector scale) {
  require_dim(mean.size(), output_dim(), "output normalizer mean");
  require_dim(scale.size(), output_dim(), "output normalizer scale");
  if ((scale.array() <= 0.0).any()) throw std::invalid_argument("normalizer scales must be positive");
  out_mean_ = std::move(mean);
  out_scale_ = std::move(scale);
}

Vector MlpNetwork::forward(const Vector& x) const {
  require_dim(x.size(), input_dim(), "network input");
  Vector a = (x - in_mean_).cwiseQuotient(in_scale_);
  for (Index l = 0; l < num_layers(); ++l) {
    Vector z = weight(l) * a + bias(l);
    a = l + 1 < num_layers() ? Vector(z.array().tanh().matrix()) : z;
  }
  return out_mean_ + out_scale_.cwiseProduct(a);
}

Matrix MlpNetwork::forward_batch(const Matrix& x) const {
  require_dim(x.rows(), input_dim(), "network input");
  Matrix a = in_scale_.cwiseInverse().asDiagonal() * (x.colwise() - in_mean_);
  for (Index l = 0; l < num_layers(); ++l) {
    Matrix z = weight(l) * a;
    z.colwise() += bias(l);
    a = l + 1 < num_layers() ? Matrix(z.array().tanh().matrix()) : z;
  }
  return (out_scale_.asDiagonal() * a).colwise() + out_mean_;
}

Matrix MlpNetwork::grad_input(const Vector& x) const {
  require_dim(x.size(), input_dim(), "network input");
  Vector a = (x - in_mean_).cwiseQuotient(in_scale_);
  Matrix jac = in_scale_.cwiseInverse().asDiagonal();
  for (Index l = 0; l < num_layers(); ++l) {
    Vector z = weight(l) * a + bias(l);
    jac = weight(l) * jac;
    if (l + 1 < num_layers()) {
      a = z.array().tanh().matrix();
      jac = tanh_prime_from_activation(a).asDiagonal() * jac;
    }
  }
  return out_scale_.asDiagonal() * jac;
}

Matrix MlpNetwork::hessian_input(const Vector& x, const Vector& weights) const {
  require_dim(x.size(), input_dim(), "network input");
  require_dim(weights.size(), output_dim(), "output weights");
  const Index layers = num_layers();
  // Forward pass keeping activations and Jacobians of each layer input.
  std::vector<Vector> act(static_cast<std::size_t>(layers));
  std::vector<Matrix> jac_in(static_cast<std::size_t>(layers));
  Vector a = (x - in_mean_).cwiseQuotient(in_scale_);
  Matrix jac = Matrix::Identity(input_dim(), input_dim());
  for (Index l = 0; l + 1 < layers; ++l) {
    jac_in[static_cast<std::size_t>(l)] = jac;
    a = (weight(l) * a + bias(l)).array().tanh().matrix();
    act[static_cast<std::size_t>(l)] = a;
    jac = tanh_prime_from_activation(a).asDiagonal() * weight(l) * jac;
  }
  // Backward pass: g is d(c' y)/d(activation) for c = weights .* out_scale.
  Vector g = weight(layers - 1).transpose() * weights.cwiseProduct(out_scale_);
  Matrix hess = Matrix::Zero(input_dim(), input_dim());
  for (Index l = layers - 2; l >= 0; --l) {
    const Vector& al = act[static_cast<std::size_t>(l)];
    const Vector d1 = tanh_prime_from_activation(al);
    const Vector d2 = (-2.0 * al.array() * d1.array()).matrix();
    const Matrix wj = weight(l) * jac_in[static_cast<std::size_t>(l)];
    hess += wj.transpose() * g.cwiseProduct(d2).asDiagonal() * wj;
    g = weight(l).transpose() * g.cwiseProduct(d1);
  }
  const Vector inv = in_scale_.cwiseInverse();
  return inv.asDiagonal() * hess * inv.asDiagonal();
}

void MlpNetwork::validate() const {
  if (dims_.size() < 2) throw std::invalid_argument("network has no layers");
  for (Index l = 0; l < num_layers(); ++l) {
    if (weight(l).rows() != dims_[static_cast<std::size_t>(l) + 1] ||
        weight(l).cols() != dims_[static_cast<std::size_t>(l)] ||
        bias(l).size() != dims_[static_cast<std::size_t>(l) + 1]) {
      throw DimensionError("network layer " + std::to_string(l) + " does not chain");
    }
  }
  if ((in_scale_.array() <= 0.0).any() || (out_scale_.array() <= 0.0).any()) {
    throw std::invalid_argument("normalizer scales must be positive");
  }
}

bool MlpNetwork::operator==(const MlpNetwork& other) const {
  if (dims_ != other.dims_) return false;
  for (Index l = 0; l < num_layers(); ++l) {
    if (weight(l) != other.weight(l) || bias(l) != other.bias(l)) return false;
  }
  return in_mean_ == other.in_mean_ && in_scale_ == other.in_scale_ &&
         out_mean_ == other.out_mean_ && out_scale_ == other.out_scale_;
}

void TrainingSet::validate(Index input_dim, Index output_dim) const {
  require_dim(inputs.rows(), input_dim, "training inputs");
  require_dim(targets.rows(), output_dim, "training targets");
  require_dim(targets.cols(), inputs.cols(), "training target count");
  if (count() < 1) throw std::invalid_argument("training set is empty");
  if (!inputs.allFinite() || !targets.allFinite()) {
    throw std::invalid_argument("training set contains non-finite values");
  }
}

double mse(const MlpNetwork& net, const TrainingSet& data) {
  if (data.count() == 0) return 0.0;
  return (net.forward_batch(data.inputs) - data.targets).squaredNorm() /
         static_cast<double>(data.count() * data.targets.rows());
}

namespace {

struct AdamState {
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
  long step = 0;
};

TrainingSet subset(const TrainingSet& data, const std::vector<Index>& idx) {
  TrainingSet s;
  s.inputs.resize(data.inputs.rows(), static_cast<Index>(idx.size()));
  s.targets.resize(data.targets.rows(), static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    s.inputs.col(static_cast<Index>(i)) = data.inputs.col(idx[i]);
    s.targets.col(static_cast<Index>(i)) = data.targets.col(idx[i]);
  }
  return s;
}

std::pair<Vector, Vector> moments(const Matrix& samples) {
  const double n = static_cast<double>(samples.cols());
  Vector mean = samples.rowwise().sum() / n;
  Vector scale = ((samples.colwise() - mean).array().square().rowwise().sum() / n).sqrt().matrix();
  for (Index i = 0; i < scale.size(); ++i) {
    if (!(scale(i) > 1e-12)) scale(i) = 1.0;
  }
  return {mean, scale};
}

// One Adam step on a minibatch given in normalized units.
void adam_step(MlpNetwork& net, AdamState& st, const Matrix& z_in, const Matrix& t_norm,
               const TrainOptions& opts, double lr) {
  const Index layers = net.num_layers();
  const auto batch = static_cast<double>(z_in.cols());
  std::vector<Matrix> acts(static_cast<std::size_t>(layers) + 1);
  acts[0] = z_in;
  for (Index l = 0; l < layers; ++l) {
    Matrix z = net.weight(l) * acts[static_cast<std::size_t>(l)];
    z.colwise() += net.bias(l);
    acts[static_cast<std::size_t>(l) + 1] = l + 1 < layers ? Matrix(z.array().tanh().matrix()) : z;
  }
  Matrix delta = 2.0 * (acts.back() - t_norm) / (batch * static_cast<double>(t_norm.rows()));
  ++st.step;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(st.step));
  for (Index l = layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Matrix gw = delta * acts[li].transpose();
    const Vector gb = delta.rowwise().sum();
    if (l > 0) {
      delta = (net.weight(l).transpose() * delta).cwiseProduct(
          (1.0 - acts[li].array().square()).matrix());
    }
    st.mw[li] = opts.beta1 * st.mw[li] + (1.0 - opts.beta1) * gw;
    st.vw[li] = opts.beta2 * st.vw[li] + (1.0 - opts.beta2) * gw.cwiseProduct(gw);
    st.mb[li] = opts.beta1 * st.mb[li] + (1.0 - opts.beta1) * gb;
    st.vb[li] = opts.beta2 * st.vb[li] + (1.0 - opts.beta2) * gb.cwiseProduct(gb);
    net.weight(l).array() -=
        lr * (st.mw[li].array() / c1) / ((st.vw[li].array() / c2).sqrt() + opts.epsilon);
    net.bias(l).array() -=
        lr * (st.mb[li].array() / c1) / ((st.vb[li].array() / c2).sqrt() + opts.epsilon);
  }
}

}  // namespace

TrainHistory train(MlpNetwork& net, const TrainingSet& data, const TrainOptions& opts) {
  net.validate();
  data.validate(net.input_dim(), net.output_dim());
  if (opts.epochs < 1 || opts.batch < 1 || !(opts.learning_rate > 0.0) ||
      !(opts.final_learning_rate > 0.0) || opts.validation_fraction < 0.0 ||
      opts.validation_fraction >= 1.0) {
    throw std::invalid_argument("invalid training hyperparameters");
  }

  std::mt19937_64 rng(opts.seed);
  std::vector<Index> order(static_cast<std::size_t>(data.count()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(opts.validation_fraction * static_cast<double>(data.count())));
  std::vector<Index> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<Index> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  if (train_idx.empty()) throw std::invalid_argument("no training samples after the validation split");
  const TrainingSet train_set = subset(data, train_idx);
  const TrainingSet val_set = val_idx.empty() ? train_set : subset(data, val_idx);

  if (opts.fit_normalizers) {
    auto [im, is] = moments(train_set.inputs);
    auto [om, os] = moments(train_set.targets);
    net.set_input_normalizer(im, is);
    net.set_output_normalizer(om, os);
  }
  const Matrix z_all = net.input_scale().cwiseInverse().asDiagonal() *
                       (train_set.inputs.colwise() - net.input_mean());
  const Matrix t_all = net.output_scale().cwiseInverse().asDiagonal() *
                       (train_set.targets.colwise() - net.output_mean());

  AdamState st;
  for (Index l = 0; l < net.num_layers(); ++l) {
    st.mw.push_back(Matrix::Zero(net.weight(l).rows(), net.weight(l).cols()));
    st.vw.push_back(Matrix::Zero(net.weight(l).rows(), net.weight(l).cols()));
    st.mb.push_back(Vector::Zero(net.bias(l).size()));
    st.vb.push_back(Vector::Zero(net.bias(l).size()));
  }

  TrainHistory hist;
  hist.initial_train_loss = mse(net, train_set);
  hist.best_validation = mse(net, val_set);
  MlpNetwork best = net;

  const auto n_train = static_cast<Index>(train_idx.size());
  const Index batch = std::min(opts.batch, n_train);
  std::vector<Index> perm(static_cast<std::size_t>(n_train));
  std::iota(perm.begin(), perm.end(), Index{0});
  Matrix zb, tb;
  const double decay = opts.epochs > 1 ? std::log(opts.final_learning_rate / opts.learning_rate) /
                                             static_cast<double>(opts.epochs - 1)
                                       : 0.0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const double lr = opts.learning_rate * std::exp(decay * epoch);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Index start = 0; start < n_train; start += batch) {
      const Index len = std::min(batch, n_train - start);
      zb.resize(z_all.rows(), len);
      tb.resize(t_all.rows(), len);
      for (Index i = 0; i < len; ++i) {
        zb.col(i) = z_all.col(perm[static_cast<std::size_t>(start + i)]);
        tb.col(i) = t_all.col(perm[static_cast<std::size_t>(start + i)]);
      }
      adam_step(net, st, zb, tb, opts, lr);
    }
    const double tl = mse(net, train_set);
    const double vl = mse(net, val_set);
    if (!std::isfinite(tl) || !std::isfinite(vl)) {
      net = best;
      throw NonFiniteLoss(epoch, "training loss became non-finite at epoch " + std::to_string(epoch));
    }
    hist.train_loss.push_back(tl);
    hist.validation_loss.push_back(vl);
    // The starting weights remain the checkpoint unless an epoch matches or beats them.
    if (vl <= hist.best_validation) {
      hist.best_validation = vl;
      hist.best_epoch = epoch;
      best = net;
    }
  }
  net = best;
  return hist;
}

// ---------------------------------------------------------------------------
// Value-function handles

NetworkValue::NetworkValue(std::shared_ptr<const MlpNetwork> net) : net_(std::move(net)) {
  if (!net_) throw std::invalid_argument("value network is null");
  if (net_->output_dim() != 1) throw DimensionError("value network must have a single output");
}

double NetworkValue::value(const Vector& x) const { return net_->forward(x)(0); }
Vector NetworkValue::gradient(const Vector& x) const { return net_->grad_input(x).row(0).transpose(); }
Matrix NetworkValue::hessian(const Vector& x) const {
  return net_->hessian_input(x, Vector::Ones(1));
}

MixedValue::MixedValue(ValueHandle a, ValueHandle b, double beta)
    : a_(std::move(a)), b_(std::move(b)), beta_(beta) {
  if (!a_ || !b_) throw std::invalid_argument("mixed value needs two functions");
  if (!(beta_ >= 0.0 && beta_ <= 1.0)) throw std::invalid_argument("mixing weight must lie in [0, 1]");
  require_dim(b_->input_dim(), a_->input_dim(), "mixed value input");
}

double MixedValue::value(const Vector& x) const {
  if (beta_ == 1.0) return a_->value(x);
  if (beta_ == 0.0) return b_->value(x);
  return beta_ * a_->value(x) + (1.0 - beta_) * b_->value(x);
}

Vector MixedValue::gradient(const Vector& x) const {
  if (beta_ == 1.0) return a_->gradient(x);
  if (beta_ == 0.0) return b_->gradient(x);
  return beta_ * a_->gradient(x) + (1.0 - beta_) * b_->gradient(x);
}

Matrix MixedValue::hessian(const Vector& x) const {
  if (beta_ == 1.0) return a_->hessian(x);
  if (beta_ == 0.0) return b_->hessian(x);
  return beta_ * a_->hessian(x) + (1.0 - beta_) * b_->hessian(x);
}

QuadraticValue::QuadraticValue(Matrix p, Vector center, double offset)
    : p_(std::move(p)), center_(std::move(center)), offset_(offset) {
  require_dim(p_.rows(), center_.size(), "quadratic value matrix");
  require_dim(p_.cols(), center_.size(), "quadratic value matrix");
  p_ = 0.5 * (p_ + p_.transpose()).eval();
}

double QuadraticValue::value(const Vector& x) const {
  const Vector d = x - center_;
  return d.dot(p_ * d) + offset_;
}
Vector QuadraticValue::gradient(const Vector& x) const { return 2.0 * p_ * (x - center_); }
Matrix QuadraticValue::hessian(const Vector&) const { return 2.0 * p_; }

AdaptiveValue::AdaptiveValue(std::shared_ptr<const MlpNetwork> value,
                             std::shared_ptr<const MlpNetwork> sensitivity, Vector theta,
                             Vector theta_nom)
    : value_(std::move(value)), sens_(std::move(sensitivity)) {
  if (!value_ || !sens_) throw std::invalid_argument("adaptive value needs both networks");
  if (value_->output_dim() != 1) throw DimensionError("value network must have a single output");
  require_dim(sens_->input_dim(), value_->input_dim(), "sensitivity network input");
  require_dim(theta.size(), sens_->output_dim(), "parameter");
  require_dim(theta_nom.size(), sens_->output_dim(), "nominal parameter");
  delta_ = theta - theta_nom;
}

double AdaptiveValue::value(const Vector& x) const {
  double v = value_->forward(x)(0);
  if (!delta_.isZero(0.0)) v += sens_->forward(x).dot(delta_);
  return v;
}

Vector AdaptiveValue::gradient(const Vector& x) const {
  Vector g = value_->grad_input(x).row(0).transpose();
  if (!delta_.isZero(0.0)) g += sens_->grad_input(x).transpose() * delta_;
  return g;
}

Matrix AdaptiveValue::hessian(const Vector& x) const {
  Matrix h = value_->hessian_input(x, Vector::Ones(1));
  if (!delta_.isZero(0.0)) h += sens_->hessian_input(x, delta_);
  return h;
}

ValueHandle network_value(const MlpNetwork& net) {
  return std::make_shared<NetworkValue>(std::make_shared<const MlpNetwork>(net));
}

ValueHandle mix_values(const MlpNetwork& v_star, const MlpNetwork& v_hat, double beta) {
  return std::make_shared<MixedValue>(network_value(v_star), network_value(v_hat), beta);
}

MlpNetwork merge_networks(const MlpNetwork& a, const MlpNetwork& b, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("mixing weight must lie in [0, 1]");
  if (a.num_layers() != b.num_layers()) throw DimensionError("merged networks must have equal depth");
  require_dim(b.input_dim(), a.input_dim(), "merged network input");
  require_dim(b.output_dim(), a.output_dim(), "merged network output");
  const Index layers = a.num_layers();
  std::vector<Index> dims{a.input_dim()};
  for (Index l = 0; l + 1 < layers; ++l) {
    dims.push_back(a.weight(l).rows() + b.weight(l).rows());
  }
  dims.push_back(a.output_dim());
  MlpNetwork m(dims);

  if (layers == 1) {
    // Purely affine networks.
    const Matrix wa = a.output_scale().asDiagonal() * a.weight(0) * a.input_scale().cwiseInverse().asDiagonal();
    const Matrix wb = b.output_scale().asDiagonal() * b.weight(0) * b.input_scale().cwiseInverse().asDiagonal();
    m.weight(0) = beta * wa + (1.0 - beta) * wb;
    m.bias(0) = beta * (a.output_mean() + a.output_scale().cwiseProduct(a.bias(0)) - wa * a.input_mean()) +
                (1.0 - beta) * (b.output_mean() + b.output_scale().cwiseProduct(b.bias(0)) - wb * b.input_mean());
    return m;
  }

  // First layer folds each input normalizer.
  const Matrix wa0 = a.weight(0) * a.input_scale().cwiseInverse().asDiagonal();
  const Matrix wb0 = b.weight(0) * b.input_scale().cwiseInverse().asDiagonal();
  const Index ra = wa0.rows();
  m.weight(0).topRows(ra) = wa0;
  m.weight(0).bottomRows(wb0.rows()) = wb0;
  m.bias(0).head(ra) = a.bias(0) - wa0 * a.input_mean();
  m.bias(0).tail(wb0.rows()) = b.bias(0) - wb0 * b.input_mean();

  for (Index l = 1; l + 1 < layers; ++l) {
    const Index r = a.weight(l).rows();
    const Index c = a.weight(l).cols();
    m.weight(l).topLeftCorner(r, c) = a.weight(l);
    m.weight(l).bottomRightCorner(b.weight(l).rows(), b.weight(l).cols()) = b.weight(l);
    m.bias(l).head(r) = a.bias(l);
    m.bias(l).tail(b.bias(l).size()) = b.bias(l);
  }

  const Index last = layers - 1;
  const Index ca = a.weight(last).cols();
  m.weight(last).leftCols(ca) = beta * a.output_scale().asDiagonal() * a.weight(last);
  m.weight(last).rightCols(b.weight(last).cols()) =
      (1.0 - beta) * b.output_scale().asDiagonal() * b.weight(last);
  m.bias(last) = beta * (a.output_mean() + a.output_scale().cwiseProduct(a.bias(last))) +
                 (1.0 - beta) * (b.output_mean() + b.output_scale().cwiseProduct(b.bias(last)));
  return m;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kMagic = "banmpc-mlp";
constexpr int kVersion = 1;

void write_values(std::ostream& out, const double* data, Index n) {
  char buf[32];
  for (Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", data[i]);
    out << (i ? " " : "") << buf;
  }
  out << '\n';
}

void write_vector(std::ostream& out, const char* name, const Vector& v) {
  out << name << ' ' << v.size() << '\n';
  write_values(out, v.data(), v.size());
}

void expect(std::istream& in, const std::string& word) {
  std::string got;
  if (!(in >> got) || got != word) {
    throw std::runtime_error("network file: expected '" + word + "', found '" + got + "'");
  }
}

double read_double(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw std::runtime_error("network file: truncated");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw std::runtime_error("network file: bad number '" + tok + "'");
  return v;
}

Index read_index(std::istream& in) {
  long long v = 0;
  if (!(in >> v) || v < 0) throw std::runtime_error("network file: bad size");
  return static_cast<Index>(v);
}

Vector read_vector(std::istream& in, const char* name, Index expected) {
  expect(in, name);
  const Index n = read_index(in);
  require_dim(n, expected, std::string("network file ") + name);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = read_double(in);
  return v;
}

}  // namespace

void write_network(std::ostream& out, const MlpNetwork& net) {
  net.validate();
  out << kMagic << ' ' << kVersion << '\n';
  out << "dims " << net.dims().size();
  for (Index d : net.dims()) out << ' ' << d;
  out << '\n';
  write_vector(out, "input_mean", net.input_mean());
  write_vector(out, "input_scale", net.input_scale());
  write_vector(out, "output_mean", net.output_mean());
  write_vector(out, "output_scale", net.output_scale());
  for (Index l = 0; l < net.num_layers(); ++l) {
    const Matrix& w = net.weight(l);
    out << "weight " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (Index r = 0; r < w.rows(); ++r) {
      const Vector row = w.row(r).transpose();
      write_values(out, row.data(), row.size());
    }
    write_vector(out, "bias", net.bias(l));
  }
  out << "end\n";
}

MlpNetwork read_network(std::istream& in) {
  expect(in, kMagic);
  const Index version = read_index(in);
  if (version != kVersion) throw std::runtime_error("network file: unsupported version " + std::to_string(version));
  expect(in, "dims");
  const Index count = read_index(in);
  std::vector<Index> dims;
  for (Index i = 0; i < count; ++i) dims.push_back(read_index(in));
  MlpNetwork net(dims);
  Vector im = read_vector(in, "input_mean", net.input_dim());
  Vector is = read_vector(in, "input_scale", net.input_dim());
  Vector om = read_vector(in, "output_mean", net.output_dim());
  Vector os = read_vector(in, "output_scale", net.output_dim());
  net.set_input_normalizer(im, is);
  net.set_output_normalizer(om, os);
  for (Index l = 0; l < net.num_layers(); ++l) {
    expect(in, "weight");
    if (read_index(in) != l) throw std::runtime_error("network file: layers out of order");
    Matrix& w = net.weight(l);
    require_dim(read_index(in), w.rows(), "network file weight rows");
    require_dim(read_index(in), w.cols(), "network file weight columns");
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = read_double(in);
    }
    net.bias(l) = read_vector(in, "bias", w.rows());
  }
  expect(in, "end");
  return net;
}

void save_network(const std::string& path, const MlpNetwork& net) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_network(out, net);
  if (!out) throw std::runtime_error("failed writing " + path);
}

MlpNetwork load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_network(in);
}

}  // namespace banmpc
