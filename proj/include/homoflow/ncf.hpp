#pragma once

#include <cstdint>
#include <string>

#include "homoflow/loss.hpp"
#include "homoflow/ode.hpp"

namespace homoflow {

/// N(u) = y~^T H(X; u).
double ncf_value(const Problem& prob, const Vector& u);
Vector ncf_grad(const Problem& prob, const Vector& u);

/// Analytic when the model provides a weighted Hessian, otherwise central
/// differences of ncf_grad with h = 1e-5 (1 + |u|), symmetrized.
Matrix ncf_hessian(const Problem& prob, const Vector& u);

/// Homogeneity degree of the model confirmed by the Euler identity at `w`.
/// Falls back to a random probe point when the output vanishes at `w`.
int detect_degree(const Problem& prob, const Vector& w);

enum class NcfSign { Positive, Zero, Negative };
enum class KktOrder { SecondOrder, FirstOrderOnly, NotKkt };

std::string to_string(NcfSign s);
std::string to_string(KktOrder o);

struct KKTReport {
  Vector point;
  double value = 0.0;
  double residual = 0.0;
  double delta_gap = 0.0;
  double hessian_norm = 0.0;
  int degree = 0;
  NcfSign sign = NcfSign::Zero;
  KktOrder order = KktOrder::NotKkt;
  long steps = 0;
  double flow_time = 0.0;
};

struct KktOptions {
  long max_steps = 200'000;
  double tol = 1e-8;
  double positive_threshold = 1e-10;
  long patience = 10'000;
  bool second_order = true;
  OdeOptions ode{1e-10, 1e-13};
};

/// Follows the normalized ascent flow u' = grad N - (u^T grad N) u from u0 and
/// certifies the limit. This is also the membership test for a stable set.
KKTReport find_kkt(const Problem& prob, const Vector& u0, const KktOptions& opt = {});

/// Fills value, residual, degree, sign, and (optionally) the second-order data
/// for a given unit vector without running any flow.
KKTReport certify_kkt(const Problem& prob, const Vector& w, const KktOptions& opt = {});

/// Orthonormal basis of the complement of unit w (k x (k-1)), from the
/// Householder reflection sending e1 to w.
Matrix tangent_basis(const Vector& w);

/// L N(w) - lambda_max(P^T Hess N(w) P). +inf when k = 1.
double delta_gap(const Problem& prob, const Vector& w);

struct InequalityTerms {
  double cocoercive = 0.0;  // must be <= 0
  double alignment = 0.0;   // must be >= 0
  double value_gap = 0.0;   // must be <= 0
};

/// Left-hand sides of the three local inequalities around a Delta-second-order
/// KKT point w*, evaluated at unit w and 0 <= t1 <= t2.
InequalityTerms inequality_terms(const Problem& prob, const Vector& wstar, double value_star, double delta,
                                 int degree, const Vector& w, double t1, double t2);

struct InequalityProbeReport {
  double gamma = 0.0;
  long samples = 0;
  double delta = 0.0;
  double max_violation_cocoercive = 0.0;
  double max_violation_alignment = 0.0;
  double max_violation_value_gap = 0.0;
  double tolerance = 1e-9;

  double max_violation() const;
  bool pass() const { return max_violation() <= tolerance; }
};

/// Samples unit w with w^T w* >= 1 - gamma and t1 <= t2 in [0, 2]. Reports,
/// never throws on violations.
InequalityProbeReport inequality_probe(const Problem& prob, const Vector& wstar, double gamma, long n_samples,
                                       std::uint64_t seed);

}  // namespace homoflow
