#include "homoflow/ode.hpp"

#include <algorithm>
#include <cmath>

namespace homoflow {

namespace {

constexpr double c2 = 0.2, c3 = 0.3, c4 = 0.8, c5 = 8.0 / 9.0;
constexpr double a21 = 0.2;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                 a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                 e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

// PI controller constants.
constexpr double beta = 0.04;
constexpr double expo1 = 0.2 - beta * 0.75;
constexpr double facc1 = 1.0 / 0.2;  // largest allowed shrink is 5x
constexpr double facc2 = 1.0 / 10.0;  // largest allowed growth is 10x
constexpr double safe = 0.9;

double scaled_norm(const Vector& v, const Vector& y0, const Vector& y1, const OdeOptions& opt) {
  double acc = 0.0;
  const Index n = v.size();
  for (Index i = 0; i < n; ++i) {
    const double sk = opt.abs_tol + opt.rel_tol * std::max(std::abs(y0(i)), std::abs(y1(i)));
    const double r = v(i) / sk;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(std::max<Index>(n, 1)));
}

// Starting step from the Hairer-Norsett-Wanner heuristic.
double initial_step(const OdeRhs& f, double t0, const Vector& y0, const Vector& f0, double dir,
                    const OdeOptions& opt, long& nfev) {
  const double dnf = scaled_norm(f0, y0, y0, opt);
  const double dny = scaled_norm(y0, y0, y0, opt);
  double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
  h = std::min(h, opt.max_step);
  Vector y1 = y0 + dir * h * f0;
  Vector f1(y0.size());
  f(t0 + dir * h, y1, f1);
  ++nfev;
  const double der2 = scaled_norm(f1 - f0, y0, y0, opt) / h;
  const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
  const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 0.2);
  return std::min({100.0 * h, h1, opt.max_step});
}

}  // namespace

Vector DenseSegment::operator()(double t) const {
  const double s = (t - t0) / h;
  const double s1 = 1.0 - s;
  return c1 + s * (c2 + s1 * (c3 + s * (c4 + s1 * c5)));
}

OdeResult dopri5(const OdeRhs& f, double t0, const Vector& y0, double t_end, const OdeOptions& opt,
                 const OdeObserver& observer) {
  require(opt.rel_tol > 0.0 && opt.abs_tol > 0.0, ErrorCode::InvalidArgument, "tolerances must be positive");
  require(y0.allFinite(), ErrorCode::NonFiniteState, "initial state is not finite");

  OdeResult res;
  res.t = t0;
  res.y = y0;
  if (t_end == t0) return res;

  const double dir = t_end > t0 ? 1.0 : -1.0;
  const Index n = y0.size();
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), y1(n), err(n);

  f(t0, y0, k1);
  ++res.evaluations;
  require(k1.allFinite(), ErrorCode::NonFiniteState, "right-hand side is not finite at the start");

  double h = opt.initial_step > 0.0 ? std::min(opt.initial_step, opt.max_step)
                                    : initial_step(f, t0, y0, k1, dir, opt, res.evaluations);
  double facold = 1e-4;
  bool last_rejected = false;
  int nonfinite_streak = 0;
  double t = t0;
  Vector y = y0;
  DenseSegment seg;

  while (dir * (t_end - t) > 0.0) {
    require(res.accepted + res.rejected < opt.max_steps, ErrorCode::MaxStepsExceeded,
            "integrator exceeded its step budget");
    const double min_step = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t));
    if (h < min_step)
      fail(ErrorCode::StepSizeUnderflow, "step size fell below " + std::to_string(min_step) + " at t = " +
                                             std::to_string(t));
    bool final_step = false;
    if (dir * (t + dir * h - t_end) >= 0.0) {
      h = std::abs(t_end - t);
      final_step = true;
    }
    const double hs = dir * h;

    ytmp = y + hs * a21 * k1;
    f(t + c2 * hs, ytmp, k2);
    ytmp = y + hs * (a31 * k1 + a32 * k2);
    f(t + c3 * hs, ytmp, k3);
    ytmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * hs, ytmp, k4);
    ytmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * hs, ytmp, k5);
    ytmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(t + hs, ytmp, k6);
    y1 = y + hs * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    f(t + hs, y1, k7);
    res.evaluations += 6;

    err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double e = scaled_norm(err, y, y1, opt);

    if (!std::isfinite(e) || !k7.allFinite()) {
      if (++nonfinite_streak > 60) fail(ErrorCode::NonFiniteState, "state became non-finite at t = " + std::to_string(t));
      h *= 0.1;
      last_rejected = true;
      ++res.rejected;
      continue;
    }
    nonfinite_streak = 0;

    const double fac11 = std::pow(e, expo1);
    if (e <= 1.0) {
      double fac = fac11 / std::pow(facold, beta);
      fac = std::clamp(fac / safe, facc2, facc1);
      double hnew = h / fac;
      facold = std::max(e, 1e-4);

      const Vector ydiff = y1 - y;
      const Vector bspl = hs * k1 - ydiff;
      seg.t0 = t;
      seg.h = hs;
      seg.c1 = y;
      seg.c2 = ydiff;
      seg.c3 = bspl;
      seg.c4 = ydiff - hs * k7 - bspl;
      seg.c5 = hs * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

      t = final_step ? t_end : t + hs;
      seg.h = t - seg.t0;
      y.swap(y1);
      k1.swap(k7);
      ++res.accepted;

      if (last_rejected) hnew = std::min(hnew, h);
      last_rejected = false;
      h = std::min(hnew, opt.max_step);

      if (observer && !observer(StepView{seg, y, k1})) {
        res.stopped_early = true;
        break;
      }
    } else {
      h /= std::min(facc1, fac11 / safe);
      last_rejected = true;
      ++res.rejected;
    }
  }
  res.t = t;
  res.y = std::move(y);
  return res;
}

}  // namespace homoflow
