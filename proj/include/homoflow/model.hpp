#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "homoflow/error.hpp"

namespace homoflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Training inputs as columns of X (d x n) with one real label per column.
struct Dataset {
  Matrix X;
  Vector y;

  Dataset() = default;
  Dataset(Matrix inputs, Vector labels);

  Index dim() const { return X.rows(); }
  Index size() const { return X.cols(); }
};

void validate(const Dataset& data);

/// sigma(x) = max(x, slope * x)^power. With power == 1 the kink at zero uses
/// `derivative_at_zero` (defaults to `slope`).
struct Activation {
  int power = 1;
  double slope = 0.0;
  std::optional<double> derivative_at_zero;

  double value(double x) const;
  double derivative(double x) const;
  double second_derivative(double x) const;
};

/// One weight matrix inside the flat vector, stored row-major.
struct LayerBlock {
  int layer = 0;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;

  Index size() const { return rows * cols; }
  Index index(Index row, Index col) const { return offset + row * cols + col; }
  bool operator==(const LayerBlock&) const = default;
};

struct WeightLayout {
  std::vector<LayerBlock> blocks;

  Index size() const;
  bool operator==(const WeightLayout&) const = default;
};

/// Flat weights with the layout that gives them structure.
struct WeightVector {
  Vector flat;
  WeightLayout layout;
};

std::vector<Matrix> unflatten(const WeightVector& w);
WeightVector flatten(const WeightLayout& layout, const std::vector<Matrix>& blocks);

/// H(x; W_1..W_L) = W_L sigma(W_{L-1} ... sigma(W_1 x) ...), no biases.
struct FeedForwardNet {
  std::vector<Index> layer_dims;  // k_0 = d, ..., k_L = 1
  Activation activation;

  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
};

/// H(x; w) = sum_i g(w_i) x_i with g(w) = w^m, or max(0, w)^m when rectified.
struct MonomialNet {
  int exponent = 2;
  Index dim = 1;
  bool rectified = false;
};

/// H(x; w) = sigma(w^T x), a single neuron without output weight.
struct SingleNeuron {
  Index dim = 1;
  Activation activation{2, 0.0, std::nullopt};
};

struct Pullback {
  Vector outputs;  // H(X; w)
  Vector grad;     // J(X; w)^T r
};

/// Maps model outputs to the cotangent r used in a pullback.
using CotangentFn = std::function<Vector(const Vector&)>;

class Model {
 public:
  using Spec = std::variant<FeedForwardNet, MonomialNet, SingleNeuron>;

  explicit Model(Spec spec);

  const Spec& spec() const { return spec_; }
  const WeightLayout& layout() const { return layout_; }
  Index num_weights() const { return layout_.size(); }
  Index input_dim() const;

  /// Symbolic homogeneity degree. Analyses that depend on it should confirm
  /// it with homogeneity_check.
  int nominal_degree() const;

  std::string describe() const;

  Vector evaluate(const Vector& w, const Matrix& X) const;
  Matrix jacobian(const Vector& w, const Matrix& X) const;
  Pullback pullback(const Vector& w, const Matrix& X, const CotangentFn& cotangent) const;
  Vector vjp(const Vector& w, const Matrix& X, const Vector& r) const;

  /// sum_i r_i Hess_w H(x_i; w) when the model has a closed form for it.
  std::optional<Matrix> weighted_hessian(const Vector& w, const Matrix& X, const Vector& r) const;

  bool is_feed_forward() const { return std::holds_alternative<FeedForwardNet>(spec_); }
  const FeedForwardNet& feed_forward() const;

 private:
  void check_shapes(const Vector& w, const Matrix& X) const;

  Spec spec_;
  WeightLayout layout_;
};

Vector evaluate_batch(const Model& model, const Vector& w, const Dataset& data);
Matrix jacobian(const Model& model, const Vector& w, const Dataset& data);

struct HomogeneityResult {
  int degree = 0;
  double residual = 0.0;  // max_i |w^T grad H(x_i;w) - L H(x_i;w)|
  std::vector<double> residual_per_degree;
};

HomogeneityResult homogeneity_check(const Model& model, const Vector& w, const Dataset& data,
                                    const std::vector<int>& degrees_to_try);

/// Unit-norm Gaussian direction; identical output for identical (k, seed).
Vector random_direction(Index k, std::uint64_t seed);
Vector scale_init(const Vector& direction, double delta);

}  // namespace homoflow
