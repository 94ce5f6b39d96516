#pragma once

#include <cstdint>

#include "homoflow/loss.hpp"

namespace homoflow {

/// Closed-form flows for L(w) = (w1^2 - 4)^2 + (w2^2 - 1)^2. Exponentials are
/// clamped so very large |t| stays finite.
Eigen::Vector2d example1_psi_w0(double t, double delta);
Eigen::Vector2d example1_psi_wstar(double t, double delta);
Eigen::Vector2d example1_p(double t);

/// sum_i w_i^2 x_i with X = I and y = (4, 1) under square loss; N(w) = 8 w1^2 + 2 w2^2.
Problem example1_problem();
Vector example1_w0();     // (1/sqrt2, 1/sqrt2)
Vector example1_wstar();  // (1, 0)

/// Cubic analogue: N(w) = 8 w1^3 + 2 w2^3.
Problem cubic_problem();

struct DeadNeuronCase {
  Problem problem;
  Vector wstar;
  double ncf_value = 0.0;
  double ncf_grad_norm = 0.0;
  double training_grad_norm = 0.0;  // at delta * w*
  double max_drift = 0.0;           // sup_t |psi(t, delta w*) - delta w*|
  bool zero_kkt = false;
};

/// Squared-ReLU neuron with w* chosen so every w*^T x_i < 0. Throws
/// NoSuchDirection when the inputs do not fit in an open halfspace.
DeadNeuronCase dead_neuron_case(const Dataset& data, std::uint64_t seed, double delta = 0.1, double t_end = 10.0);

/// Inputs uniform on the unit sphere; labels from a small square-activation
/// teacher whose output weights are rescaled so max |y| = 1.
struct TeacherData {
  Dataset data;
  Matrix teacher_W;  // width x d, unit rows
  Vector teacher_v;
};

TeacherData generate_figure1_dataset(std::uint64_t seed, Index n = 100, Index d = 20, Index teacher_width = 2);

Matrix unit_sphere_points(Index d, Index n, std::uint64_t seed);

/// Student v^T sigma(W x) of the given width with sigma(x) = x^2, square loss.
Problem figure1_problem(const Dataset& data, Index hidden = 50);

}  // namespace homoflow
