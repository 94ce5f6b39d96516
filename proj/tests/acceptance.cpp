// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when any
// criterion fails. Runtime limits are part of each pass condition.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "homoflow/escape.hpp"
#include "homoflow/ncf.hpp"
#include "homoflow/oracle.hpp"
#include "homoflow/parallel.hpp"
#include "homoflow/sparsity.hpp"

using namespace homoflow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void info(const std::string& id, const std::string& msg) { std::printf("INFO [%s] %s\n", id.c_str(), msg.c_str()); }

bool run(const std::string& id, const std::string& title, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("threw ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < limit_s;
  const bool ok = out.pass && in_time;
  std::printf("%s [%s] %s: %s (%.2f s of %.0f s)\n", ok ? "PASS" : "FAIL", id.c_str(), title.c_str(),
              out.detail.c_str(), secs, limit_s);
  std::fflush(stdout);
  return ok;
}

Vector gaussian(Index k, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(k);
  for (Index i = 0; i < k; ++i) v(i) = n(rng);
  return v;
}

Matrix gaussian(Index r, Index c, std::mt19937_64& rng) {
  return Eigen::Map<Matrix>(gaussian(r * c, rng).data(), r, c);
}

Matrix central_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x, xm = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp(i) += h;
    xm(i) -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp(i) = xm(i) = x(i);
  }
  return J;
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

// Figure-1 experiment for one seed: teacher data and init direction both derive from it.
struct SeedRun {
  bool equal = false;
  bool paired = false;
  std::size_t active = 0;
  std::string error;
};

SeedRun figure1_seed(std::uint64_t seed) {
  SeedRun r;
  try {
    const Problem prob = figure1_problem(generate_figure1_dataset(seed).data);
    const Vector w0 = scale_init(random_direction(prob.model.num_weights(), 1000 + seed), 1e-3);
    const SparsityExperiment ex = sparsity_experiment(prob, w0);
    r.equal = ex.report.equal;
    r.paired = ex.report.mask_before.pairing_consistent && ex.report.mask_after.pairing_consistent;
    r.active = ex.report.mask_after.active_neurons(prob.model).at(0).size();
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

Outcome c1() {
  const Problem prob = example1_problem();
  double worst = 0.0;
  for (bool from_star : {false, true}) {
    for (double delta : {0.1, 0.05, 0.001}) {
      const Vector w0 = delta * (from_star ? example1_wstar() : example1_w0());
      IntegratorConfig cfg = scaled_for_delta({}, delta);
      cfg.keep_dense = true;
      const Trajectory tr = integrate_training_flow(prob, w0, 3.0, cfg);
      bool monotone = loss_non_increasing(tr);
      if (!monotone) return {false, "loss increased along the flow"};
      for (int i = 0; i <= 3000; ++i) {
        const double t = 3.0 * i / 3000.0;
        const Eigen::Vector2d exact = from_star ? example1_psi_wstar(t, delta) : example1_psi_w0(t, delta);
        worst = std::max(worst, (tr.state_at(t) - Vector(exact)).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst <= 1e-6, "sup error " + fmt("%.3g", worst) + " <= 1e-6"};
}

Outcome c2() {
  const Problem prob = example1_problem();
  const KKTReport r = find_kkt(prob, example1_w0());
  const KKTReport s = certify_kkt(prob, Eigen::Vector2d(0, 1));
  const double bound = r.degree * (r.degree - 1) * r.value;
  const bool ok = (r.point - example1_wstar()).norm() <= 1e-8 && std::abs(r.value - 8.0) <= 1e-8 &&
                  r.residual <= 1e-8 && std::abs(r.delta_gap - 12.0) <= 1e-6 &&
                  s.order == KktOrder::FirstOrderOnly && std::abs(s.delta_gap + 12.0) <= 1e-6 &&
                  r.hessian_norm <= bound * (1.0 + 1e-12);
  return {ok, "N " + fmt("%.12g", r.value) + ", residual " + fmt("%.2g", r.residual) + ", Delta " +
                  fmt("%.10g", r.delta_gap) + ", (0,1) " + to_string(s.order) + " Delta " + fmt("%.10g", s.delta_gap) +
                  ", |Hess| " + fmt("%.10g", r.hessian_norm) + " <= " + fmt("%g", bound)};
}

Outcome c3() {
  const EscapeSweep sw = escape_scaling_fit(example1_problem(), example1_w0(), {1e-2, 1e-3, 1e-4, 1e-5});
  const double err = sw.slope_relative_error();
  return {err <= 0.05 && sw.fit.r2 >= 0.999,
          "slope " + fmt("%.6f", sw.fit.slope) + " vs 1/16 (rel err " + fmt("%.2g", err) + "), R^2 " +
              fmt("%.8f", sw.fit.r2)};
}

Outcome c4() {
  const EscapeSweep sw = escape_scaling_fit(cubic_problem(), example1_wstar(), {0.05, 0.02, 0.01, 0.005});
  const double err = sw.slope_relative_error();
  return {err <= 0.05, "slope " + fmt("%.6f", sw.fit.slope) + " vs 1/24 (rel err " + fmt("%.2g", err) + ")"};
}

Outcome c5() {
  const Problem prob = cubic_problem();
  const Vector u0 = Eigen::Vector2d(0.8, 0.6);
  const KKTReport k = find_kkt(prob, u0);
  if ((k.point - example1_wstar()).norm() > 1e-6) return {false, "u0 is not in the stable set of (1, 0)"};
  const NcfFlowResult res = integrate_ncf_flow(prob, u0, std::numeric_limits<double>::infinity());
  if (!res.blowup) return {false, "no blow-up detected"};
  const int L = res.degree;
  const double lo = 1.0 / (L * (L - 2) * k.value), hi = 1.0 / (L * (L - 2) * ncf_value(prob, u0));
  const double T = res.blowup->t_blow;
  return {T >= 0.99 * lo && T <= 1.01 * hi,
          "T_blow " + fmt("%.6f", T) + " in [" + fmt("%.6f", lo) + ", " + fmt("%.6f", hi) + "]"};
}

Outcome c6() {
  const Problem prob = example1_problem();
  const Trajectory p = estimate_p_path(prob, example1_wstar(), 1e-5, {0.0, 3.0});
  const Vector p0_exact = Eigen::Vector2d(2.0 / std::sqrt(5.0), 0.0);
  const double e0 = (p.states[0] - p0_exact).cwiseAbs().maxCoeff();
  const double einf = (p.states[1] - Vector(Eigen::Vector2d(2, 0))).cwiseAbs().maxCoeff();

  const double d1 = 1e-6;
  const double g_a = cauchy_gap(prob, example1_wstar(), d1, 1e-3, 0.0);
  const double g_b = cauchy_gap(prob, example1_wstar(), d1, 5e-4, 0.0);
  const double ratio = g_b / g_a;
  const bool halves = std::abs(ratio - 0.5) <= 0.3 * 0.5;
  info("C6", "gap/delta2 = " + fmt("%.3g", g_a / 1e-3) + " at 1e-3, " + fmt("%.3g", g_b / 5e-4) +
                 " at 5e-4; the upper bound gap <= C delta2 holds, the gap itself is quadratic in delta2");

  const double delta = 1e-5;
  const Trajectory full =
      integrate_training_flow(prob, delta * example1_w0(), 12.0, scaled_for_delta({}, delta));
  const double efin = (full.states.back() - Vector(Eigen::Vector2d(2, 1))).cwiseAbs().maxCoeff();

  const bool ok = e0 <= 1e-3 && einf <= 1e-3 && efin <= 1e-3 && halves;
  return {ok, "p(0) err " + fmt("%.2g", e0) + ", p(3) err to (2,0) " + fmt("%.2g", einf) + ", final err to (2,1) " +
                  fmt("%.2g", efin) + ", cauchy gap ratio on halving delta2 " + fmt("%.4f", ratio) +
                  " (needs 0.5 +- 30%)"};
}

Outcome c7() {
  const Problem prob = example1_problem();
  std::vector<double> lx, ly;
  std::string gaps;
  for (double delta : {1e-3, 1e-4, 1e-5, 1e-6}) {
    const ClosenessReport r = theorem_closeness(prob, example1_w0(), example1_wstar(), delta, 0.25);
    lx.push_back(std::log(delta));
    ly.push_back(std::log(r.gap));
    gaps += (gaps.empty() ? "" : ", ") + fmt("%.2g", r.gap);
  }
  const double slope = linear_fit(lx, ly).slope;
  const double need = 0.8 * 12.0 / 76.0;
  return {slope >= need, "log-log slope " + fmt("%.4f", slope) + " >= " + fmt("%.4f", need) + " (gaps " + gaps + ")"};
}

Outcome c8() {
  const Problem prob = example1_problem();
  std::vector<double> x, diff, total;
  for (double delta : {1e-5, 1e-6, 1e-7, 1e-8}) {
    const double t_end = 1.5 * std::log(1.0 / delta) / 4.0 + 2.0;
    const Trajectory tr = integrate_training_flow(prob, delta * example1_w0(), t_end, scaled_for_delta({}, delta));
    const double loss0 = training_loss(prob, Vector::Zero(2));
    double lmin = loss0;
    for (double l : tr.loss) lmin = std::min(lmin, l);
    const double eta = 0.05 * (loss0 - lmin);
    const double t1 = empirical_escape_time(tr, LossDrop{eta, loss0});
    const SaddleRecord s = detect_first_saddle(tr);
    if (s.kind != SaddleKind::Finite || (s.point - Vector(Eigen::Vector2d(2, 0))).norm() > 1e-2)
      return {false, "first saddle is not (2, 0) at delta " + fmt("%g", delta)};
    const double t2 = second_escape_time(tr, s.t_reached, s.loss_at, eta);
    x.push_back(std::log(1.0 / delta));
    diff.push_back(t2 - t1);
    total.push_back(t2);
  }
  const double slope = linear_fit(x, diff).slope;
  info("C8", "slope of the second escape time itself vs ln(1/delta) = " + fmt("%.5f", linear_fit(x, total).slope) +
                 "; the difference follows 1/4 - 1/16 = 3/16");
  return {std::abs(slope - 0.25) <= 0.025,
          "slope of (second - first escape) vs ln(1/delta) " + fmt("%.5f", slope) + " vs 0.25 +- 10%"};
}

Outcome c9() {
  const Problem prob = figure1_problem(generate_figure1_dataset(0).data);
  NeuronSelection sel;
  sel.per_layer.push_back({});
  for (Index j = 0; j < 50; j += 2) sel.per_layer[0].push_back(j);
  Vector w0 = random_direction(prob.model.num_weights(), 9);
  for (Index i : zero_preserving_indices(prob.model, sel)) w0(i) = 0.0;
  const ZeroPreservationResult gd = verify_zero_preserving_gd(prob, sel, w0, 5e-3, 10'000);
  const ZeroPreservationResult ode = verify_zero_preserving_ode(prob, sel, w0, 5.0);
  return {gd.bitwise_zero && gd.max_abs == 0.0 && ode.max_abs <= 1e-13,
          "GD max |w_z| " + fmt("%g", gd.max_abs) + " over 1e4 steps, ODE max " + fmt("%g", ode.max_abs)};
}

Outcome c10() {
  const Problem prob = figure1_problem(generate_figure1_dataset(0).data);
  const KKTReport r = find_kkt(prob, random_direction(prob.model.num_weights(), 42));
  const double bal = balance_check(prob.model, r.point, 2);
  return {r.order != KktOrder::NotKkt && r.sign == NcfSign::Positive && bal <= 1e-6,
          "N " + fmt("%.4f", r.value) + ", residual " + fmt("%.2g", r.residual) + ", balance residual " +
              fmt("%.2g", bal)};
}

Outcome c11() {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<SeedRun> runs(seeds.size());
  const int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  parallel_for(seeds.size(), jobs, [&](std::size_t i) { runs[i] = figure1_seed(seeds[i]); });
  int good = 0;
  std::string per;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const bool ok = runs[i].equal && runs[i].paired;
    good += ok;
    per += (per.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seeds[i]) + " " +
           (runs[i].error.empty() ? (ok ? "preserved" : "changed") + std::string(" (") +
                                        std::to_string(runs[i].active) + " active)"
                                  : "error: " + runs[i].error);
  }
  return {good >= 4, std::to_string(good) + "/5 seeds preserve the mask [" + per + "]"};
}

Outcome c12() {
  std::mt19937_64 rng(12);
  const std::vector<Model> models{
      Model(FeedForwardNet{{4, 6, 1}, {2, -1.0, std::nullopt}}),
      Model(FeedForwardNet{{4, 6, 1}, {2, 0.0, std::nullopt}}),
      Model(FeedForwardNet{{3, 4, 3, 1}, {2, -1.0, std::nullopt}}),
      Model(FeedForwardNet{{3, 5, 1}, {1, 0.2, std::nullopt}}),
      Model(MonomialNet{2, 4, false}),
      Model(MonomialNet{3, 4, true}),
      Model(SingleNeuron{4, {2, 0.0, std::nullopt}}),
  };
  double worst_j = 0.0, worst_g = 0.0, worst_euler = 0.0;
  for (const Model& m : models) {
    const Index d = m.input_dim();
    const Problem prob(m, Loss{LossKind::Square}, Dataset(gaussian(d, 8, rng), gaussian(8, rng)));
    const int L = m.nominal_degree();
    for (int trial = 0; trial < 100; ++trial) {
      const Vector w = gaussian(m.num_weights(), rng, 0.7);
      const Matrix J = m.jacobian(w, prob.data.X);
      worst_j = std::max(worst_j, rel(J, central_jacobian([&](const Vector& v) { return m.evaluate(v, prob.data.X); }, w)));
      const Vector g = ncf_grad(prob, w);
      const Matrix gfd = central_jacobian([&](const Vector& v) { return Vector::Constant(1, ncf_value(prob, v)); }, w);
      worst_g = std::max(worst_g, rel(g.transpose(), gfd));
      const Vector h = m.evaluate(w, prob.data.X);
      const Vector euler = J * w - L * h;
      worst_euler = std::max(worst_euler, euler.cwiseAbs().maxCoeff() / (1.0 + h.cwiseAbs().maxCoeff()));
    }
  }
  return {worst_j <= 1e-5 && worst_g <= 1e-5 && worst_euler <= 1e-8,
          "Jacobian rel err " + fmt("%.2g", worst_j) + ", NCF gradient rel err " + fmt("%.2g", worst_g) +
              ", Euler residual " + fmt("%.2g", worst_euler)};
}

Outcome c13() {
  Matrix X = unit_sphere_points(3, 12, 5);
  X.row(0) = X.row(0).cwiseAbs();
  const DeadNeuronCase c = dead_neuron_case(Dataset(X, Vector::Ones(12)), 5);
  return {c.max_drift < 1e-12 && c.zero_kkt,
          "max drift " + fmt("%g", c.max_drift) + ", N " + fmt("%g", c.ncf_value) + ", zero KKT " +
              (c.zero_kkt ? "yes" : "no")};
}

Outcome c14() {
  const InequalityProbeReport r = inequality_probe(example1_problem(), example1_wstar(), 1e-3, 1000, 14);
  return {r.pass(), "max violation " + fmt("%.3g", r.max_violation()) + " over " + std::to_string(r.samples) +
                        " samples (cocoercive " + fmt("%.2g", r.max_violation_cocoercive) + ", alignment " +
                        fmt("%.2g", r.max_violation_alignment) + ", value gap " +
                        fmt("%.2g", r.max_violation_value_gap) + ")"};
}

}  // namespace

int main() {
  int failed = 0;
  failed += !run("C1", "closed-form flow equivalence", 5, c1);
  failed += !run("C2", "KKT certification", 1, c2);
  failed += !run("C3", "escape-time scaling, L = 2", 30, c3);
  failed += !run("C4", "escape-time scaling, L = 3", 60, c4);
  failed += !run("C5", "NCF blow-up interval, L = 3", 5, c5);
  failed += !run("C6", "limiting path p(t)", 30, c6);
  failed += !run("C7", "closeness exponent", 60, c7);
  failed += !run("C8", "second-saddle timing", 60, c8);
  failed += !run("C9", "zero-preserving subsets", 30, c9);
  failed += !run("C10", "balance at a KKT point", 30, c10);
  failed += !run("C11", "sparsity preservation", 600, c11);
  failed += !run("C12", "gradient and Hessian correctness", 10, c12);
  failed += !run("C13", "non-escape case", 1, c13);
  failed += !run("C14", "local inequality probes", 5, c14);
  std::printf("%d of 14 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
