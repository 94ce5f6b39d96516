#include "homoflow/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "homoflow/flow.hpp"
#include "homoflow/ncf.hpp"

namespace homoflow {

namespace {

double safe_exp(double x) { return std::exp(std::min(x, 700.0)); }

void check_delta(double delta) {
  require(delta > 0.0 && delta < 1.0, ErrorCode::DomainError, "closed forms need delta in (0, 1)");
}

// 2 delta / sqrt(delta^2 + (c - delta^2) e^{-rate t}), written to avoid overflow for t << 0.
double logistic_branch(double t, double delta, double amplitude, double c, double rate) {
  const double e = safe_exp(-rate * t);
  return amplitude * delta / std::sqrt(delta * delta + (c - delta * delta) * e);
}

}  // namespace

Eigen::Vector2d example1_psi_w0(double t, double delta) {
  check_delta(delta);
  return {logistic_branch(t, delta, 2.0, 8.0, 32.0), logistic_branch(t, delta, 1.0, 2.0, 8.0)};
}

Eigen::Vector2d example1_psi_wstar(double t, double delta) {
  check_delta(delta);
  return {logistic_branch(t, delta, 2.0, 4.0, 32.0), 0.0};
}

Eigen::Vector2d example1_p(double t) { return {2.0 / std::sqrt(1.0 + 4.0 * safe_exp(-32.0 * t)), 0.0}; }

Problem example1_problem() {
  return Problem(Model(MonomialNet{2, 2, false}), Loss{LossKind::Square},
                 Dataset(Matrix::Identity(2, 2), Eigen::Vector2d(4.0, 1.0)));
}

Vector example1_w0() { return Eigen::Vector2d(1.0, 1.0) / std::sqrt(2.0); }

Vector example1_wstar() { return Eigen::Vector2d(1.0, 0.0); }

Problem cubic_problem() {
  return Problem(Model(MonomialNet{3, 2, false}), Loss{LossKind::Square},
                 Dataset(Matrix::Identity(2, 2), Eigen::Vector2d(4.0, 1.0)));
}

DeadNeuronCase dead_neuron_case(const Dataset& data, std::uint64_t seed, double delta, double t_end) {
  validate(data);
  const Matrix& X = data.X;
  const Index d = X.rows();
  const auto separates = [&](const Vector& v) { return (X.transpose() * v).minCoeff() > 0.0; };

  Vector v = X.rowwise().sum();
  if (!separates(v)) {
    // Perceptron on the one-class problem v^T x_i > 0.
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < d; ++i) v(i) = normal(rng);
    bool ok = false;
    for (int epoch = 0; epoch < 10'000 && !ok; ++epoch) {
      ok = true;
      for (Index i = 0; i < X.cols(); ++i) {
        if (v.dot(X.col(i)) <= 0.0) {
          v += X.col(i) / X.col(i).squaredNorm();
          ok = false;
        }
      }
    }
    if (!ok || !separates(v))
      fail(ErrorCode::NoSuchDirection, "inputs do not lie in an open halfspace; no dead direction exists");
  }

  DeadNeuronCase out{Problem(Model(SingleNeuron{d, Activation{2, 0.0, std::nullopt}}), Loss{LossKind::Square}, data),
                     -v / v.norm()};
  const Problem& prob = out.problem;
  out.ncf_value = ncf_value(prob, out.wstar);
  out.ncf_grad_norm = ncf_grad(prob, out.wstar).norm();
  const Vector w0 = delta * out.wstar;
  out.training_grad_norm = training_grad(prob, w0).norm();

  IntegratorConfig cfg;
  const Trajectory tr = integrate_training_flow(prob, w0, t_end, cfg);
  for (const Vector& s : tr.states) out.max_drift = std::max(out.max_drift, (s - w0).norm());

  const KKTReport rep = certify_kkt(prob, out.wstar);
  out.zero_kkt = rep.sign == NcfSign::Zero && rep.order != KktOrder::NotKkt;
  return out;
}

Matrix unit_sphere_points(Index d, Index n, std::uint64_t seed) {
  require(d >= 1 && n >= 1, ErrorCode::InvalidArgument, "sphere sample needs d, n >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix X(d, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < d; ++i) X(i, j) = normal(rng);
    X.col(j).normalize();
  }
  return X;
}

TeacherData generate_figure1_dataset(std::uint64_t seed, Index n, Index d, Index teacher_width) {
  require(teacher_width >= 1, ErrorCode::InvalidArgument, "teacher needs at least one neuron");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix X = unit_sphere_points(d, n, rng());

  TeacherData out;
  out.teacher_W.resize(teacher_width, d);
  out.teacher_v.resize(teacher_width);
  for (Index k = 0; k < teacher_width; ++k) {
    for (Index i = 0; i < d; ++i) out.teacher_W(k, i) = normal(rng);
    out.teacher_W.row(k).normalize();
    out.teacher_v(k) = normal(rng);
  }
  Vector y = ((out.teacher_W * X).array().square().matrix().transpose()) * out.teacher_v;
  const double scale = y.cwiseAbs().maxCoeff();
  require(scale > 0.0, ErrorCode::InvalidArgument, "teacher output vanished on every input");
  out.teacher_v /= scale;
  y = ((out.teacher_W * X).array().square().matrix().transpose()) * out.teacher_v;
  out.data = Dataset(std::move(X), std::move(y));
  return out;
}

Problem figure1_problem(const Dataset& data, Index hidden) {
  FeedForwardNet net{{data.dim(), hidden, 1}, Activation{2, -1.0, std::nullopt}};
  return Problem(Model(net), Loss{LossKind::Square}, data);
}

}  // namespace homoflow
