#pragma once

#include <string_view>

#include "homoflow/model.hpp"

namespace homoflow {

enum class LossKind { Square, Logistic };

/// Scalar loss l(p, q) of prediction p and label q. Logistic labels are +-1.
struct Loss {
  LossKind kind = LossKind::Square;

  double value(double p, double q) const;
  double first(double p, double q) const;   // dl/dp
  double second(double p, double q) const;  // d2l/dp2
  double smoothness() const;                // bound K on |l''|
  std::string_view name() const;
};

Loss parse_loss(std::string_view name);

/// Model, loss and data travel together through every analysis.
struct Problem {
  Model model;
  Loss loss;
  Dataset data;

  Problem(Model m, Loss l, Dataset d);
};

/// y~ = -l'(0, y), the label vector correlated against the network output.
Vector target_correlation(const Loss& loss, const Vector& y);

double training_loss(const Problem& prob, const Vector& w);
Vector training_grad(const Problem& prob, const Vector& w);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};
LossAndGrad training_loss_and_grad(const Problem& prob, const Vector& w);

}  // namespace homoflow
