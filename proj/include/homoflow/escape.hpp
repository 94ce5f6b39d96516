#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "homoflow/flow.hpp"
#include "homoflow/ncf.hpp"

namespace homoflow {

/// ln(1/delta) / (2 N*) for L = 2, delta^{-(L-2)} / (L (L-2) N*) for L > 2.
double predicted_escape_time(int degree, double ncf_star, double delta);

/// Escape once L(psi) <= L(0) - eta.
struct LossDrop {
  double eta = 0.0;
  double loss_at_origin = 0.0;
};
/// Escape once |psi| >= rho.
struct NormReach {
  double rho = 0.0;
};
using EscapeCriterion = std::variant<LossDrop, NormReach>;

/// First crossing time, linearly interpolated between recorded rows.
/// Throws NeverEscaped if the trajectory never crosses.
double empirical_escape_time(const Trajectory& traj, const EscapeCriterion& criterion);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

struct EscapeSweepOptions {
  IntegratorConfig integrator;
  double eta_fraction = 0.05;  // eta = fraction * (L(0) - min observed loss)
  double horizon_factor = 1.25;
  double horizon_pad = 2.0;
  int jobs = 1;
  double min_r2 = 0.99;
};

struct EscapeSweep {
  int degree = 0;
  double ncf_star = 0.0;
  Vector wstar;
  std::vector<double> deltas;
  std::vector<double> regressor;  // ln(1/delta) or delta^{-(L-2)}
  std::vector<double> times;
  std::vector<double> predicted;
  double eta = 0.0;
  LinearFit fit;
  double theory_slope = 0.0;

  double slope_relative_error() const { return std::abs(fit.slope - theory_slope) / theory_slope; }
};

/// Runs psi(., delta w0) for every delta and regresses escape time on the
/// theory's regressor. Requires >= 4 deltas spanning 100x (10x when L > 2) and w0 in a
/// stable set of a positive KKT point. Throws PoorFit if R^2 < min_r2.
EscapeSweep escape_scaling_fit(const Problem& prob, const Vector& w0, const std::vector<double>& deltas,
                               const EscapeSweepOptions& opt = {});

/// Tightens the absolute tolerance so relative accuracy survives a start at
/// scale delta.
IntegratorConfig scaled_for_delta(IntegratorConfig cfg, double delta);

/// psi(t + t_escape(delta), delta w*) on the given grid.
Trajectory estimate_p_path(const Problem& prob, const Vector& wstar, double delta, const std::vector<double>& t_grid,
                           const IntegratorConfig& cfg = {});

/// |shifted psi at delta1 - shifted psi at delta2| at time t.
double cauchy_gap(const Problem& prob, const Vector& wstar, double delta1, double delta2, double t,
                  const IntegratorConfig& cfg = {});

struct ClosenessReport {
  double delta = 0.0;
  double reference_delta = 0.0;
  double aligned_shift = 0.0;     // t0 where psi(., delta w0) is closest to p(0)
  double predicted_shift = 0.0;
  double gap = 0.0;               // max over the window
};

/// Gap between psi(., delta w0), aligned at the time closest to p(0), and the
/// path p estimated at delta * 1e-3, over t in [-T, T].
ClosenessReport theorem_closeness(const Problem& prob, const Vector& w0, const Vector& wstar, double delta,
                                  double horizon, const IntegratorConfig& cfg = {}, int grid = 200);

enum class SaddleKind { Finite, AtInfinity };

struct SaddleRecord {
  SaddleKind kind = SaddleKind::Finite;
  Vector point;  // unit direction for a saddle at infinity
  double loss_at = 0.0;
  double grad_norm_at = 0.0;
  double t_reached = 0.0;
  std::size_t row = 0;
};

struct SaddleOptions {
  double eps = 1e-2;
  double window = -1.0;           // time span; negative means 5% of the run
  double growth_threshold = 1e3;  // norm beyond which a saddle counts as at infinity
};

/// First point after leaving the origin where the gradient drops below eps and
/// the loss plateaus (finite) or the direction settles while the norm grows.
SaddleRecord detect_first_saddle(const Trajectory& traj, const SaddleOptions& opt = {});

/// First time after `after` at which the loss falls `eta` below `plateau_loss`.
double second_escape_time(const Trajectory& traj, double after, double plateau_loss, double eta);

}  // namespace homoflow
