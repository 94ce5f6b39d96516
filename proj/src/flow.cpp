#include "homoflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "homoflow/ncf.hpp"

namespace homoflow {

namespace {

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return a.dot(b) / (na * nb);
}

void append_row(Trajectory& tr, double t, const Vector& y, double value, double grad_norm, bool store) {
  tr.times.push_back(t);
  tr.norm.push_back(y.norm());
  tr.loss.push_back(value);
  tr.grad_norm.push_back(grad_norm);
  tr.cos_to_target.push_back(tr.target ? cosine(y, *tr.target)
                                       : std::numeric_limits<double>::quiet_NaN());
  if (store) tr.states.push_back(y);
}

std::vector<double> sorted_checkpoints(const std::vector<double>& cps, double t_end) {
  std::vector<double> out = cps;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (double c : out)
    require(c >= 0.0 && c <= t_end, ErrorCode::InvalidArgument,
            "checkpoint " + std::to_string(c) + " lies outside [0, t_end]");
  return out;
}

// Row values of a flow whose right-hand side is sign * grad F: F(y) and |grad F|.
using RowFn = std::function<std::pair<double, double>(const Vector& y, const Vector* dy)>;

// Integrates y' = rhs over [0, t_end], storing rows for accepted steps and
// dense checkpoints. `stop` may end the run early after any accepted step.
Trajectory run_flow(const Problem& prob, const OdeRhs& rhs, const RowFn& row, const Vector& y0, double t_end,
                    const IntegratorConfig& cfg, const std::optional<Vector>& target,
                    const std::function<bool(const StepView&)>& stop = {}) {
  Trajectory tr;
  tr.layout = prob.model.layout();
  tr.target = target;
  const bool finite_end = std::isfinite(t_end);
  const std::vector<double> cps = sorted_checkpoints(cfg.checkpoint_times, finite_end ? t_end : 1e300);
  std::size_t next_cp = 0;
  while (next_cp < cps.size() && cps[next_cp] <= 0.0) ++next_cp;

  {
    auto [v, g] = row(y0, nullptr);
    append_row(tr, 0.0, y0, v, g, cfg.store_states);
  }
  OdeResult res = dopri5(rhs, 0.0, y0, t_end, cfg.ode(), [&](const StepView& s) {
    const double t1 = s.t();
    while (next_cp < cps.size() && cps[next_cp] <= t1) {
      const double c = cps[next_cp++];
      if (c >= t1) break;
      const Vector yc = s.segment(c);
      auto [v, g] = row(yc, nullptr);
      append_row(tr, c, yc, v, g, cfg.store_states);
    }
    const bool at_checkpoint = next_cp > 0 && cps[next_cp - 1] == t1;
    const bool keep_going = !stop || stop(s);
    const bool last = !keep_going || (finite_end && t1 >= t_end);
    if (cfg.record_steps || at_checkpoint || last) {
      auto [v, g] = row(s.y, &s.dy);
      append_row(tr, t1, s.y, v, g, cfg.store_states);
    }
    if (cfg.keep_dense) tr.dense.push_back(s.segment);
    return keep_going;
  });
  (void)res;
  return tr;
}

}  // namespace

OdeOptions IntegratorConfig::ode() const {
  require(rel_tol > 0.0 && abs_tol > 0.0, ErrorCode::InvalidArgument, "tolerances must be positive");
  OdeOptions o;
  o.rel_tol = rel_tol;
  o.abs_tol = abs_tol;
  o.max_step = max_step;
  o.max_steps = max_steps;
  return o;
}

long Trajectory::find_time(double t) const {
  auto it = std::lower_bound(times.begin(), times.end(), t - 1e-12 * (1.0 + std::abs(t)));
  if (it != times.end() && std::abs(*it - t) <= 1e-12 * (1.0 + std::abs(t))) return it - times.begin();
  return -1;
}

Vector Trajectory::state_at(double t) const {
  const long row = find_time(t);
  if (row >= 0 && has_states()) return states[row];
  if (!dense.empty() && t >= dense.front().t0 && t <= dense.back().t1()) {
    auto it = std::lower_bound(dense.begin(), dense.end(), t,
                               [](const DenseSegment& s, double v) { return s.t1() < v; });
    if (it == dense.end()) --it;
    return (*it)(t);
  }
  fail(ErrorCode::CheckpointMissing, "no state recorded at t = " + std::to_string(t));
}

Trajectory integrate_training_flow(const Problem& prob, const Vector& w0, double t_end,
                                   const IntegratorConfig& cfg, const std::optional<Vector>& target) {
  require(t_end > 0.0 && std::isfinite(t_end), ErrorCode::InvalidArgument, "t_end must be positive and finite");
  require(w0.size() == prob.model.num_weights(), ErrorCode::DimensionMismatch, "w0 has the wrong length");
  const OdeRhs rhs = [&](double, const Vector& w, Vector& dw) { dw = -training_grad(prob, w); };
  const RowFn row = [&](const Vector& y, const Vector* dy) -> std::pair<double, double> {
    if (dy) return {training_loss(prob, y), dy->norm()};
    LossAndGrad lg = training_loss_and_grad(prob, y);
    return {lg.loss, lg.grad.norm()};
  };
  return run_flow(prob, rhs, row, w0, t_end, cfg, target);
}

NcfFlowResult integrate_ncf_flow(const Problem& prob, const Vector& u0, double t_end, const IntegratorConfig& cfg) {
  require(u0.size() == prob.model.num_weights(), ErrorCode::DimensionMismatch, "u0 has the wrong length");
  require(std::abs(u0.norm() - 1.0) <= 1e-8, ErrorCode::InvalidArgument, "NCF flow needs a unit-norm start");
  NcfFlowResult out;
  out.degree = detect_degree(prob, u0);
  const int L = out.degree;
  require(L > 2 || std::isfinite(t_end), ErrorCode::InvalidArgument,
          "degree <= 2 flows never blow up; give a finite t_end");
  require(t_end > 0.0, ErrorCode::InvalidArgument, "t_end must be positive");

  const Vector yt = target_correlation(prob.loss, prob.data.y);
  const OdeRhs rhs = [&](double, const Vector& u, Vector& du) { du = prob.model.vjp(u, prob.data.X, yt); };
  const RowFn row = [&](const Vector& y, const Vector* dy) -> std::pair<double, double> {
    const double v = ncf_value(prob, y);
    return {v, dy ? dy->norm() : ncf_grad(prob, y).norm()};
  };

  std::deque<std::pair<double, double>> tail;  // (t, |u|) of the last accepted steps
  constexpr std::size_t fit_window = 20;
  bool capped = false;
  Vector last_state = u0;
  const auto stop = [&](const StepView& s) {
    const double nrm = s.y.norm();
    last_state = s.y;
    tail.emplace_back(s.t(), nrm);
    if (tail.size() > fit_window) tail.pop_front();
    if (L > 2 && nrm >= cfg.blowup_norm_cap) {
      capped = true;
      return false;
    }
    return true;
  };
  out.traj = run_flow(prob, rhs, row, u0, t_end, cfg, std::nullopt, stop);

  if (capped) {
    // 1/|u|^{L-2} is affine in t once the direction has settled.
    const double n = static_cast<double>(tail.size());
    double tm = 0.0, zm = 0.0;
    std::vector<double> z;
    for (auto [t, nrm] : tail) {
      z.push_back(std::pow(nrm, -(L - 2.0)));
      tm += t;
      zm += z.back();
    }
    tm /= n;
    zm /= n;
    double stt = 0.0, stz = 0.0, szz = 0.0;
    std::size_t i = 0;
    for (auto [t, nrm] : tail) {
      (void)nrm;
      stt += (t - tm) * (t - tm);
      stz += (t - tm) * (z[i] - zm);
      szz += (z[i] - zm) * (z[i] - zm);
      ++i;
    }
    BlowupRecord rec;
    const double slope = stz / stt;
    rec.t_blow = tm - zm / slope;
    rec.fit_r2 = szz > 0.0 ? stz * stz / (stt * szz) : 1.0;
    rec.final_direction = last_state / last_state.norm();
    out.blowup = rec;
  }
  return out;
}

Trajectory gd_train(const Problem& prob, const Vector& w0, double lr, long n_iters, const GdOptions& opt) {
  require(lr > 0.0 && std::isfinite(lr), ErrorCode::InvalidArgument, "learning rate must be positive");
  require(n_iters >= 0, ErrorCode::InvalidArgument, "iteration count must be non-negative");
  require(opt.record_every >= 1, ErrorCode::InvalidArgument, "record_every must be >= 1");
  require(w0.size() == prob.model.num_weights(), ErrorCode::DimensionMismatch, "w0 has the wrong length");
  std::vector<long> cps = opt.checkpoint_iters;
  std::sort(cps.begin(), cps.end());
  for (long c : cps)
    require(c >= 0 && c <= n_iters, ErrorCode::InvalidArgument, "checkpoint iteration outside the run");
  std::size_t next_cp = 0;

  Trajectory tr;
  tr.layout = prob.model.layout();
  tr.target = opt.target;
  Vector w = w0;
  for (long it = 0; it <= n_iters; ++it) {
    LossAndGrad lg = training_loss_and_grad(prob, w);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
      fail(ErrorCode::NonFiniteState, "gradient descent diverged at iteration " + std::to_string(it));
    bool at_cp = false;
    while (next_cp < cps.size() && cps[next_cp] <= it) at_cp |= cps[next_cp++] == it;
    const bool halt = opt.stop && opt.stop(it, lg);
    if (at_cp || halt || it % opt.record_every == 0 || it == n_iters) {
      append_row(tr, lr * static_cast<double>(it), w, lg.loss, lg.grad.norm(), opt.store_states);
      tr.iterations.push_back(it);
    }
    if (halt) break;
    if (it < n_iters) w.noalias() -= lr * lg.grad;
  }
  return tr;
}

bool loss_non_increasing(const Trajectory& traj, double slack) {
  for (std::size_t i = 1; i < traj.loss.size(); ++i)
    if (traj.loss[i] > traj.loss[i - 1] + slack * (1.0 + std::abs(traj.loss[i - 1]))) return false;
  return true;
}

LipschitzProbe flow_lipschitz_probe(const Problem& prob, const Vector& p, const Vector& q, double horizon,
                                    const IntegratorConfig& cfg, int grid) {
  const double dist0 = (p - q).norm();
  require(dist0 > 0.0, ErrorCode::InvalidArgument, "Lipschitz probe needs p != q");
  require(horizon > 0.0 && grid >= 1, ErrorCode::InvalidArgument, "horizon and grid must be positive");
  require(p.norm() >= 1e-10 && q.norm() >= 1e-10, ErrorCode::DomainError,
          "backward integration from the origin's neighbourhood is refused");

  IntegratorConfig c = cfg;
  c.record_steps = false;
  c.store_states = true;
  c.checkpoint_times.clear();
  for (int i = 1; i <= grid; ++i) c.checkpoint_times.push_back(horizon * i / grid);

  LipschitzProbe out;
  out.ratio_at_zero = 1.0;
  out.max_ratio = 1.0;

  const auto sweep = [&](double sign) {
    const OdeRhs rhs = [&](double, const Vector& w, Vector& dw) {
      if (sign > 0.0 && w.norm() < 1e-10)
        fail(ErrorCode::DomainError, "backward flow came within 1e-10 of the origin");
      dw = sign * training_grad(prob, w);
    };
    const RowFn row = [&](const Vector& y, const Vector*) -> std::pair<double, double> {
      return {training_loss(prob, y), 0.0};
    };
    const Trajectory tp = run_flow(prob, rhs, row, p, horizon, c, std::nullopt);
    const Trajectory tq = run_flow(prob, rhs, row, q, horizon, c, std::nullopt);
    for (double t : c.checkpoint_times) {
      const double r = (tp.state_at(t) - tq.state_at(t)).norm() / dist0;
      require(std::isfinite(r), ErrorCode::NonFiniteState, "flow became non-finite during the probe");
      if (r > out.max_ratio) {
        out.max_ratio = r;
        out.worst_time = sign < 0.0 ? t : -t;
      }
    }
  };
  sweep(-1.0);
  sweep(+1.0);
  return out;
}

}  // namespace homoflow
