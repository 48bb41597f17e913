#pragma once

// Dense tanh networks used as value functions V_NN(x) and sensitivity heads
// dV/dtheta(x), with exact input derivatives for embedding in OCP objectives.

#include "banmpc/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace banmpc {

/// y = out_mean + out_scale .* (W_L tanh(... tanh(W_1 z + b_1) ...) + b_L),
/// z = (x - in_mean) ./ in_scale.
class MlpNetwork {
 public:
  MlpNetwork() = default;
  /// Zero weights and identity normalizers.
  explicit MlpNetwork(std::vector<Index> dims);
  /// Glorot-uniform hidden layers and a zero output layer.
  static MlpNetwork initialized(std::vector<Index> dims, std::uint64_t seed);

  const std::vector<Index>& dims() const { return dims_; }
  Index input_dim() const { return dims_.front(); }
  Index output_dim() const { return dims_.back(); }
  Index num_layers() const { return static_cast<Index>(weights_.size()); }

  Matrix& weight(Index layer) { return weights_[static_cast<std::size_t>(layer)]; }
  const Matrix& weight(Index layer) const { return weights_[static_cast<std::size_t>(layer)]; }
  Vector& bias(Index layer) { return biases_[static_cast<std::size_t>(layer)]; }
  const Vector& bias(Index layer) const { return biases_[static_cast<std::size_t>(layer)]; }

  const Vector& input_mean() const { return in_mean_; }
  const Vector& input_scale() const { return in_scale_; }
  const Vector& output_mean() const { return out_mean_; }
  const Vector& output_scale() const { return out_scale_; }
  void set_input_normalizer(Vector mean, Vector scale);
  void set_output_normalizer(Vector mean, Vector scale);

  Vector forward(const Vector& x) const;
  /// One sample per column.
  Matrix forward_batch(const Matrix& x) const;
  /// Jacobian of the output with respect to x (n_out x n_x).
  Matrix grad_input(const Vector& x) const;
  /// Hessian of weights' * output with respect to x.
  Matrix hessian_input(const Vector& x, const Vector& weights) const;

  void validate() const;
  bool operator==(const MlpNetwork& other) const;

 private:
  std::vector<Index> dims_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  Vector in_mean_, in_scale_;
  Vector out_mean_, out_scale_;
};

/// Samples stored one per column.
struct TrainingSet {
  Matrix inputs;
  Matrix targets;

  Index count() const { return inputs.cols(); }
  void validate(Index input_dim, Index output_dim) const;
};

struct TrainOptions {
  int epochs = 200;
  Index batch = 256;
  double learning_rate = 1e-3;
  /// Learning rate reached after the last epoch under exponential decay.
  /// Equal to learning_rate for a constant rate.
  double final_learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  /// Fit normalizers to the training inputs and targets before training.
  bool fit_normalizers = true;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  int best_epoch = -1;
  double best_validation = 0.0;
  double initial_train_loss = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(int epoch, const std::string& what) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Mean squared error over samples and outputs.
double mse(const MlpNetwork& net, const TrainingSet& data);

/// Minibatch Adam on the MSE; keeps the weights with the lowest validation
/// loss. Deterministic given the seed. Existing weights are the starting point.
TrainHistory train(MlpNetwork& net, const TrainingSet& data, const TrainOptions& opts);

/// Scalar function of the state with first and second derivatives.
class ValueFunction {
 public:
  virtual ~ValueFunction() = default;
  virtual Index input_dim() const = 0;
  virtual double value(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const = 0;
  virtual Matrix hessian(const Vector& x) const = 0;
};

using ValueHandle = std::shared_ptr<const ValueFunction>;

class NetworkValue final : public ValueFunction {
 public:
  explicit NetworkValue(std::shared_ptr<const MlpNetwork> net);
  Index input_dim() const override { return net_->input_dim(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Matrix hessian(const Vector& x) const override;
  const MlpNetwork& network() const { return *net_; }

 private:
  std::shared_ptr<const MlpNetwork> net_;
};

/// beta * a + (1 - beta) * b.
class MixedValue final : public ValueFunction {
 public:
  MixedValue(ValueHandle a, ValueHandle b, double beta);
  Index input_dim() const override { return a_->input_dim(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Matrix hessian(const Vector& x) const override;

 private:
  ValueHandle a_, b_;
  double beta_;
};

/// (x - center)' P (x - center) + offset.
class QuadraticValue final : public ValueFunction {
 public:
  QuadraticValue(Matrix p, Vector center, double offset = 0.0);
  Index input_dim() const override { return center_.size(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Matrix hessian(const Vector& x) const override;

 private:
  Matrix p_;
  Vector center_;
  double offset_;
};

/// V(x) + S(x) (theta - theta_nom) with a sensitivity network S of q outputs.
class AdaptiveValue final : public ValueFunction {
 public:
  AdaptiveValue(std::shared_ptr<const MlpNetwork> value, std::shared_ptr<const MlpNetwork> sensitivity,
                Vector theta, Vector theta_nom);
  Index input_dim() const override { return value_->input_dim(); }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  Matrix hessian(const Vector& x) const override;
  const Vector& deviation() const { return delta_; }

 private:
  std::shared_ptr<const MlpNetwork> value_;
  std::shared_ptr<const MlpNetwork> sens_;
  Vector delta_;
};

ValueHandle network_value(const MlpNetwork& net);
ValueHandle mix_values(const MlpNetwork& v_star, const MlpNetwork& v_hat, double beta);

/// Single network computing beta * a(x) + (1 - beta) * b(x) exactly; both
/// inputs must have the same depth and dimensions at both ends.
MlpNetwork merge_networks(const MlpNetwork& a, const MlpNetwork& b, double beta);

void write_network(std::ostream& out, const MlpNetwork& net);
MlpNetwork read_network(std::istream& in);
void save_network(const std::string& path, const MlpNetwork& net);
MlpNetwork load_network(const std::string& path);

}  // namespace banmpc
