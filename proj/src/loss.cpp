#include "homoflow/loss.hpp"

#include <cmath>
#include <string>

namespace homoflow {

namespace {

// log(1 + e^{-z}) without overflow.
double softplus_neg(double z) {
  if (z > 0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double Loss::value(double p, double q) const {
  switch (kind) {
    case LossKind::Square: return (p - q) * (p - q);
    case LossKind::Logistic: return softplus_neg(q * p);
  }
  fail(ErrorCode::UnknownLossKind, "unhandled loss kind");
}

double Loss::first(double p, double q) const {
  switch (kind) {
    case LossKind::Square: return 2.0 * (p - q);
    case LossKind::Logistic: return -q * sigmoid(-q * p);
  }
  fail(ErrorCode::UnknownLossKind, "unhandled loss kind");
}

double Loss::second(double p, double q) const {
  switch (kind) {
    case LossKind::Square: return 2.0;
    case LossKind::Logistic: {
      const double s = sigmoid(q * p);
      return q * q * s * (1.0 - s);
    }
  }
  fail(ErrorCode::UnknownLossKind, "unhandled loss kind");
}

double Loss::smoothness() const { return kind == LossKind::Square ? 2.0 : 0.25; }

std::string_view Loss::name() const { return kind == LossKind::Square ? "square" : "logistic"; }

Loss parse_loss(std::string_view name) {
  if (name == "square") return {LossKind::Square};
  if (name == "logistic") return {LossKind::Logistic};
  fail(ErrorCode::UnknownLossKind, "unknown loss '" + std::string(name) + "'");
}

Problem::Problem(Model m, Loss l, Dataset d) : model(std::move(m)), loss(l), data(std::move(d)) {
  validate(data);
  require(data.dim() == model.input_dim(), ErrorCode::DimensionMismatch,
          "data dimension does not match model input");
  if (loss.kind == LossKind::Logistic)
    for (Index i = 0; i < data.size(); ++i)
      require(data.y(i) == 1.0 || data.y(i) == -1.0, ErrorCode::InvalidArgument,
              "logistic loss needs labels in {-1, +1}");
}

Vector target_correlation(const Loss& loss, const Vector& y) {
  return y.unaryExpr([&](double q) { return -loss.first(0.0, q); });
}

double training_loss(const Problem& prob, const Vector& w) {
  const Vector h = prob.model.evaluate(w, prob.data.X);
  double total = 0.0;
  for (Index i = 0; i < h.size(); ++i) total += prob.loss.value(h(i), prob.data.y(i));
  return total;
}

LossAndGrad training_loss_and_grad(const Problem& prob, const Vector& w) {
  const Vector& y = prob.data.y;
  Pullback pb = prob.model.pullback(w, prob.data.X, [&](const Vector& h) {
    Vector r(h.size());
    for (Index i = 0; i < h.size(); ++i) r(i) = prob.loss.first(h(i), y(i));
    return r;
  });
  LossAndGrad out;
  for (Index i = 0; i < y.size(); ++i) out.loss += prob.loss.value(pb.outputs(i), y(i));
  out.grad = std::move(pb.grad);
  return out;
}

Vector training_grad(const Problem& prob, const Vector& w) { return training_loss_and_grad(prob, w).grad; }

}  // namespace homoflow
