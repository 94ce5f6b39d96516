#include "homoflow/escape.hpp"

#include <algorithm>
#include <cmath>

#include "homoflow/parallel.hpp"

namespace homoflow {

namespace {

double interpolate_crossing(double t0, double v0, double t1, double v1, double level) {
  if (v1 == v0) return t1;
  const double s = std::clamp((level - v0) / (v1 - v0), 0.0, 1.0);
  return t0 + s * (t1 - t0);
}

double escape_regressor(int degree, double delta) {
  return degree == 2 ? std::log(1.0 / delta) : std::pow(delta, -(degree - 2.0));
}

// Smallest-scale delta whose predicted escape time is at least t.
double delta_for_escape_time(int degree, double ncf_star, double t) {
  if (degree == 2) return std::exp(-2.0 * ncf_star * t);
  return std::pow(degree * (degree - 2.0) * ncf_star * t, -1.0 / (degree - 2.0));
}

KKTReport certified_positive(const Problem& prob, const Vector& wstar) {
  KktOptions opt;
  opt.second_order = false;
  KKTReport rep = certify_kkt(prob, wstar, opt);
  require(rep.order != KktOrder::NotKkt, ErrorCode::InvalidArgument,
          "w* is not a KKT point (residual " + std::to_string(rep.residual) + ")");
  require(rep.sign == NcfSign::Positive, ErrorCode::NonPositiveNCF, "w* has non-positive NCF value");
  return rep;
}

}  // namespace

double predicted_escape_time(int degree, double ncf_star, double delta) {
  require(degree >= 2, ErrorCode::InvalidArgument, "escape time needs degree >= 2");
  require(ncf_star > 0.0, ErrorCode::NonPositiveNCF, "escape time needs N(w*) > 0");
  require(delta > 0.0 && delta <= 1.0, ErrorCode::InvalidArgument, "escape time needs delta in (0, 1]");
  if (degree == 2) return std::log(1.0 / delta) / (2.0 * ncf_star);
  return std::pow(delta, -(degree - 2.0)) / (degree * (degree - 2.0) * ncf_star);
}

double empirical_escape_time(const Trajectory& traj, const EscapeCriterion& criterion) {
  require(!traj.empty(), ErrorCode::InvalidArgument, "empty trajectory");
  const bool by_loss = std::holds_alternative<LossDrop>(criterion);
  const double level = by_loss ? std::get<LossDrop>(criterion).loss_at_origin - std::get<LossDrop>(criterion).eta
                               : std::get<NormReach>(criterion).rho;
  const std::vector<double>& v = by_loss ? traj.loss : traj.norm;
  const auto crossed = [&](double x) { return by_loss ? x <= level : x >= level; };
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!crossed(v[i])) continue;
    if (i == 0) return traj.times[0];
    return interpolate_crossing(traj.times[i - 1], v[i - 1], traj.times[i], v[i], level);
  }
  fail(ErrorCode::NeverEscaped, "trajectory never met the escape criterion by t = " +
                                    std::to_string(traj.times.back()));
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::InvalidArgument, "fit needs >= 2 paired points");
  const double n = static_cast<double>(x.size());
  double xm = 0.0, ym = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xm += x[i];
    ym += y[i];
  }
  xm /= n;
  ym /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
    syy += (y[i] - ym) * (y[i] - ym);
  }
  require(sxx > 0.0, ErrorCode::PoorFit, "regressor has no spread");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = ym - f.slope * xm;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

IntegratorConfig scaled_for_delta(IntegratorConfig cfg, double delta) {
  cfg.abs_tol = std::min(cfg.abs_tol, cfg.rel_tol * delta);
  return cfg;
}

EscapeSweep escape_scaling_fit(const Problem& prob, const Vector& w0, const std::vector<double>& deltas,
                               const EscapeSweepOptions& opt) {
  require(deltas.size() >= 4, ErrorCode::PoorFit, "escape fit needs at least 4 values of delta");
  const auto [lo, hi] = std::minmax_element(deltas.begin(), deltas.end());
  require(*lo > 0.0 && *hi < 1.0, ErrorCode::InvalidArgument, "every delta must lie in (0, 1)");
  require(w0.norm() > 0.0, ErrorCode::InvalidArgument, "w0 must be non-zero");

  EscapeSweep out;
  const Vector u0 = w0 / w0.norm();
  KktOptions kopt;
  kopt.second_order = false;
  const KKTReport kkt = find_kkt(prob, u0, kopt);
  require(kkt.sign == NcfSign::Positive, ErrorCode::NonPositiveNCF,
          "w0 does not lie in the stable set of a positive KKT point");
  out.degree = kkt.degree;
  // ln(1/delta) needs two decades of delta; delta^{-(L-2)} already stretches one decade by a power.
  const double span = out.degree == 2 ? 100.0 : 10.0;
  require(*hi / *lo >= span * (1.0 - 1e-12), ErrorCode::PoorFit,
          "deltas span too narrow a range for degree " + std::to_string(out.degree));
  out.ncf_star = kkt.value;
  out.wstar = kkt.point;
  out.deltas = deltas;
  out.theory_slope = out.degree == 2 ? 1.0 / (2.0 * out.ncf_star)
                                     : 1.0 / (out.degree * (out.degree - 2.0) * out.ncf_star);

  std::vector<Trajectory> runs(deltas.size());
  parallel_for(deltas.size(), opt.jobs, [&](std::size_t i) {
    IntegratorConfig cfg = scaled_for_delta(opt.integrator, deltas[i]);
    cfg.store_states = false;
    const double t_pred = predicted_escape_time(out.degree, out.ncf_star, deltas[i]);
    runs[i] = integrate_training_flow(prob, deltas[i] * u0, opt.horizon_factor * t_pred + opt.horizon_pad, cfg);
  });

  const double loss0 = training_loss(prob, Vector::Zero(prob.model.num_weights()));
  double min_loss = loss0;
  for (const auto& r : runs) min_loss = std::min(min_loss, *std::min_element(r.loss.begin(), r.loss.end()));
  out.eta = opt.eta_fraction * (loss0 - min_loss);
  require(out.eta > 0.0, ErrorCode::NeverEscaped, "no run reduced the loss below L(0)");

  for (std::size_t i = 0; i < deltas.size(); ++i) {
    out.times.push_back(empirical_escape_time(runs[i], LossDrop{out.eta, loss0}));
    out.regressor.push_back(escape_regressor(out.degree, deltas[i]));
    out.predicted.push_back(predicted_escape_time(out.degree, out.ncf_star, deltas[i]));
  }
  out.fit = linear_fit(out.regressor, out.times);
  if (out.fit.r2 < opt.min_r2)
    fail(ErrorCode::PoorFit, "escape-time regression has R^2 = " + std::to_string(out.fit.r2));
  return out;
}

Trajectory estimate_p_path(const Problem& prob, const Vector& wstar, double delta, const std::vector<double>& t_grid,
                           const IntegratorConfig& cfg) {
  require(!t_grid.empty() && std::is_sorted(t_grid.begin(), t_grid.end()), ErrorCode::InvalidArgument,
          "time grid must be non-empty and sorted");
  const KKTReport kkt = certified_positive(prob, wstar);
  const double shift = predicted_escape_time(kkt.degree, kkt.value, delta);
  require(t_grid.front() + shift >= 0.0, ErrorCode::InvalidArgument,
          "grid reaches before the initialization; use a smaller delta");

  IntegratorConfig c = scaled_for_delta(cfg, delta);
  c.record_steps = false;
  c.store_states = true;
  c.checkpoint_times.clear();
  for (double t : t_grid) c.checkpoint_times.push_back(t + shift);
  const double t_end = t_grid.back() + shift;
  Trajectory run;
  if (t_end > 0.0) {
    run = integrate_training_flow(prob, delta * kkt.point, t_end, c);
  } else {
    run.times = {0.0};
    run.states = {delta * kkt.point};
  }

  Trajectory out;
  out.layout = prob.model.layout();
  for (double t : t_grid) {
    const Vector s = run.state_at(t + shift);
    out.times.push_back(t);
    out.states.push_back(s);
    out.norm.push_back(s.norm());
    out.loss.push_back(training_loss(prob, s));
    out.grad_norm.push_back(training_grad(prob, s).norm());
    out.cos_to_target.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

double cauchy_gap(const Problem& prob, const Vector& wstar, double delta1, double delta2, double t,
                  const IntegratorConfig& cfg) {
  require(delta1 > 0.0 && delta2 >= delta1, ErrorCode::InvalidArgument, "cauchy_gap needs delta2 >= delta1 > 0");
  if (delta1 == delta2) return 0.0;
  const Trajectory a = estimate_p_path(prob, wstar, delta1, {t}, cfg);
  const Trajectory b = estimate_p_path(prob, wstar, delta2, {t}, cfg);
  return (a.states[0] - b.states[0]).norm();
}

ClosenessReport theorem_closeness(const Problem& prob, const Vector& w0, const Vector& wstar, double delta,
                                  double horizon, const IntegratorConfig& cfg, int grid) {
  require(horizon > 0.0 && grid >= 2, ErrorCode::InvalidArgument, "horizon and grid must be positive");
  const KKTReport kkt = certified_positive(prob, wstar);
  ClosenessReport rep;
  rep.delta = delta;
  rep.reference_delta = std::min(delta * 1e-3, delta_for_escape_time(kkt.degree, kkt.value, 1.25 * horizon));
  rep.predicted_shift = predicted_escape_time(kkt.degree, kkt.value, delta);

  std::vector<double> ts;
  for (int k = 0; k <= grid; ++k) ts.push_back(-horizon + 2.0 * horizon * k / grid);
  const Trajectory p = estimate_p_path(prob, wstar, rep.reference_delta, ts, cfg);
  const Vector p0 = estimate_p_path(prob, wstar, rep.reference_delta, {0.0}, cfg).states[0];

  IntegratorConfig c = scaled_for_delta(cfg, delta);
  c.keep_dense = true;
  c.store_states = true;
  const Vector start = delta * w0 / w0.norm();
  const Trajectory run = integrate_training_flow(prob, start, 2.0 * rep.predicted_shift + horizon + 1.0, c);

  const auto dist = [&](double t) { return (run.state_at(t) - p0).norm(); };
  std::size_t best = 0;
  double best_d = dist(run.times[0]);
  for (std::size_t i = 1; i < run.size(); ++i) {
    const double d = (run.states[i] - p0).norm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  // Golden-section refinement between the neighbouring rows.
  double a = run.times[best > 0 ? best - 1 : 0];
  double b = run.times[std::min(best + 1, run.size() - 1)];
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double f1 = dist(x1), f2 = dist(x2);
  for (int it = 0; it < 100 && b - a > 1e-14 * (1.0 + b); ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - g * (b - a);
      f1 = dist(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + g * (b - a);
      f2 = dist(x2);
    }
  }
  rep.aligned_shift = 0.5 * (a + b);
  require(rep.aligned_shift - horizon >= 0.0, ErrorCode::InvalidArgument,
          "comparison window starts before initialization; shrink the horizon or delta");
  require(rep.aligned_shift + horizon <= run.times.back(), ErrorCode::InvalidArgument,
          "comparison window extends past the integrated horizon");

  for (std::size_t k = 0; k < ts.size(); ++k)
    rep.gap = std::max(rep.gap, (run.state_at(rep.aligned_shift + ts[k]) - p.states[k]).norm());
  return rep;
}

SaddleRecord detect_first_saddle(const Trajectory& traj, const SaddleOptions& opt) {
  const std::size_t n = traj.size();
  require(n >= 2, ErrorCode::InvalidArgument, "saddle detection needs at least two rows");
  require(opt.eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
  const double window = opt.window > 0.0 ? opt.window : 0.05 * (traj.times.back() - traj.times.front());

  // Skip the plateau around the origin: wait until the gradient has exceeded eps.
  std::size_t i = 0;
  while (i < n && traj.grad_norm[i] <= opt.eps) ++i;
  if (i == n) fail(ErrorCode::NoSaddleFound, "gradient never exceeded eps; trajectory did not leave the origin");

  for (; i < n; ++i) {
    if (traj.grad_norm[i] > opt.eps) continue;
    const double t_stop = traj.times[i] + window;
    std::size_t j = i;
    bool plateau = true, settled = traj.has_states();
    while (j + 1 < n && traj.times[j + 1] <= t_stop) {
      ++j;
      plateau &= std::abs(traj.loss[j] - traj.loss[i]) <= opt.eps * (1.0 + std::abs(traj.loss[i]));
      if (settled) {
        const double c = traj.states[j].dot(traj.states[i]) / (traj.norm[j] * traj.norm[i]);
        settled &= c >= 1.0 - opt.eps;
      }
    }
    SaddleRecord rec;
    rec.loss_at = traj.loss[i];
    rec.grad_norm_at = traj.grad_norm[i];
    rec.t_reached = traj.times[i];
    rec.row = i;
    if (traj.norm[i] <= opt.growth_threshold && plateau) {
      rec.kind = SaddleKind::Finite;
      if (traj.has_states()) rec.point = traj.states[i];
      return rec;
    }
    if (traj.norm[i] > opt.growth_threshold && settled) {
      rec.kind = SaddleKind::AtInfinity;
      rec.point = traj.states[i] / traj.norm[i];
      return rec;
    }
  }
  fail(ErrorCode::NoSaddleFound, "no row satisfied the saddle test with eps = " + std::to_string(opt.eps));
}

double second_escape_time(const Trajectory& traj, double after, double plateau_loss, double eta) {
  require(eta > 0.0, ErrorCode::InvalidArgument, "eta must be positive");
  const double level = plateau_loss - eta;
  for (std::size_t i = 1; i < traj.size(); ++i) {
    if (traj.times[i] <= after || traj.loss[i] > level) continue;
    return interpolate_crossing(traj.times[i - 1], traj.loss[i - 1], traj.times[i], traj.loss[i], level);
  }
  fail(ErrorCode::NeverEscaped, "loss never fell below the saddle plateau");
}

}  // namespace homoflow
