#pragma once

#include <functional>
#include <limits>

#include "homoflow/model.hpp"

namespace homoflow {

/// Right-hand side dy = f(t, y); writes into the preallocated `dy`.
using OdeRhs = std::function<void(double, const Vector&, Vector&)>;

struct OdeOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  double initial_step = 0.0;  // 0 picks one automatically
  long max_steps = 20'000'000;
};

/// Continuous extension of one accepted step, valid on [t0, t0 + h].
struct DenseSegment {
  double t0 = 0.0;
  double h = 0.0;
  Vector c1, c2, c3, c4, c5;

  double t1() const { return t0 + h; }
  Vector operator()(double t) const;
};

/// Passed to the observer after every accepted step. `dy` is f(t, y) at the
/// step end, available for free thanks to first-same-as-last.
struct StepView {
  const DenseSegment& segment;
  const Vector& y;
  const Vector& dy;
  double t() const { return segment.t1(); }
};

/// Returning false stops the integration after the current step.
using OdeObserver = std::function<bool(const StepView&)>;

struct OdeResult {
  double t = 0.0;
  Vector y;
  long accepted = 0;
  long rejected = 0;
  long evaluations = 0;
  bool stopped_early = false;
};

/// Dormand-Prince 5(4) with PI step-size control and 4th-order dense output.
/// Integrates backward when t_end < t0.
OdeResult dopri5(const OdeRhs& f, double t0, const Vector& y0, double t_end, const OdeOptions& opt,
                 const OdeObserver& observer = {});

}  // namespace homoflow
