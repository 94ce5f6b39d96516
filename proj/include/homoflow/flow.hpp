#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "homoflow/loss.hpp"
#include "homoflow/ode.hpp"

namespace homoflow {

struct IntegratorConfig {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  double blowup_norm_cap = 1e8;
  std::vector<double> checkpoint_times;
  long max_steps = 20'000'000;
  bool record_steps = true;   // one row per accepted step
  bool store_states = true;   // keep the full weight vector per row
  bool keep_dense = false;    // keep every dense segment for later interpolation

  OdeOptions ode() const;
};

/// Time series of a flow or of gradient descent. Per-row columns are parallel
/// to `times`; `states` is empty when states were not stored. For NCF flows
/// the `loss` column holds N(u) instead.
struct Trajectory {
  WeightLayout layout;
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<double> norm;
  std::vector<double> loss;
  std::vector<double> grad_norm;
  std::vector<double> cos_to_target;
  std::vector<long> iterations;  // gradient descent only
  std::vector<DenseSegment> dense;
  std::optional<Vector> target;

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  bool has_states() const { return !states.empty(); }

  /// State at time t: dense interpolation if segments are kept, else an exact
  /// row match (within 1e-12 relative). Throws CheckpointMissing otherwise.
  Vector state_at(double t) const;
  /// Row index of an exactly recorded time, or -1.
  long find_time(double t) const;
};

/// w' = -grad L(w) from w0 over [0, t_end].
Trajectory integrate_training_flow(const Problem& prob, const Vector& w0, double t_end,
                                   const IntegratorConfig& cfg = {},
                                   const std::optional<Vector>& target = std::nullopt);

struct BlowupRecord {
  double t_blow = 0.0;
  Vector final_direction;
  double fit_r2 = 0.0;
};

struct NcfFlowResult {
  Trajectory traj;
  int degree = 0;
  std::optional<BlowupRecord> blowup;
};

/// Raw ascent flow u' = grad N(u). For degree > 2 the run stops at the norm cap
/// and the blow-up time is extrapolated from the affine law of |u|^{-(L-2)}.
NcfFlowResult integrate_ncf_flow(const Problem& prob, const Vector& u0, double t_end,
                                 const IntegratorConfig& cfg = {});

struct GdOptions {
  long record_every = 1;
  std::vector<long> checkpoint_iters;
  bool store_states = true;
  std::optional<Vector> target;
  /// Called every iteration; returning true records the row and stops.
  std::function<bool(long, const LossAndGrad&)> stop;
};

/// w_{t+1} = w_t - lr grad L(w_t); row times are lr * iteration.
Trajectory gd_train(const Problem& prob, const Vector& w0, double lr, long n_iters, const GdOptions& opt = {});

/// True when loss never increases by more than 1e-10 (1 + loss) between rows.
bool loss_non_increasing(const Trajectory& traj, double slack = 1e-10);

struct LipschitzProbe {
  double max_ratio = 0.0;
  double ratio_at_zero = 0.0;
  double worst_time = 0.0;
};

/// max over t in [-T, T] of |psi(t,p) - psi(t,q)| / |p - q|. Negative times
/// integrate w' = +grad L and refuse to approach the origin.
LipschitzProbe flow_lipschitz_probe(const Problem& prob, const Vector& p, const Vector& q, double horizon,
                                    const IntegratorConfig& cfg = {}, int grid = 200);

}  // namespace homoflow
