#include "homoflow/labkit/runner.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "homoflow/labkit/io.hpp"
#include "homoflow/oracle.hpp"
#include "homoflow/parallel.hpp"

namespace homoflow::labkit {

namespace {

std::ostream& log_of(const RunContext& ctx) { return ctx.log ? *ctx.log : std::cout; }

IntegratorConfig scaled_integrator(const ExperimentConfig& cfg, const RunContext& ctx) {
  require(ctx.tol_scale > 0.0, ErrorCode::ConfigError, "--tol-scale must be positive");
  IntegratorConfig ic = cfg.run.integrator;
  ic.rel_tol *= ctx.tol_scale;
  ic.abs_tol *= ctx.tol_scale;
  return ic;
}

std::string delta_tag(std::size_t i) { return "delta" + std::to_string(i); }

std::uint64_t model_hash(const Model& m) { return fnv1a(m.describe()); }

Matrix layer_matrix(const Vector& w, const LayerBlock& b) {
  Matrix m(b.rows, b.cols);
  for (Index r = 0; r < b.rows; ++r)
    for (Index c = 0; c < b.cols; ++c) m(r, c) = w(b.index(r, c));
  return m;
}

}  // namespace

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& cli) {
  if (cli && !cli->empty()) return *cli;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("HOMOFLOW_OUT"); env && *env) return std::filesystem::path(env) / cfg.name;
  return std::filesystem::path("out") / cfg.name;
}

int run_simulate(const ExperimentConfig& cfg, const RunContext& ctx) {
  const Problem prob = build_problem(cfg, ctx.seed);
  const Vector u0 = initial_direction(cfg, prob.model.num_weights(), ctx.seed);
  RunManifest man(ctx.out_dir, "simulate", cfg.source_text);
  man.add_seed("init", ctx.seed.value_or(cfg.init.seed));
  man.add_seed("data", ctx.seed.value_or(cfg.data.seed));

  const auto& deltas = cfg.init.deltas;
  std::vector<Trajectory> runs(deltas.size());
  const IntegratorConfig ic = scaled_integrator(cfg, ctx);
  parallel_for(deltas.size(), ctx.jobs, [&](std::size_t i) {
    if (cfg.run.mode == RunMode::Ode) {
      runs[i] = integrate_training_flow(prob, deltas[i] * u0, cfg.run.t_end, ic, u0);
    } else {
      GdOptions g;
      g.record_every = cfg.run.record_every;
      g.target = u0;
      runs[i] = gd_train(prob, deltas[i] * u0, cfg.run.lr, cfg.run.iters, g);
    }
  });

  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const std::string tag = delta_tag(i);
    write_trajectory_csv(man.path("trajectory_" + tag + ".csv"), runs[i]);
    write_state_sidecar(man.path("states_" + tag + ".bin"), runs[i]);
    man.add_file("trajectory_" + tag + ".csv");
    man.add_file("states_" + tag + ".bin");
    man.add_file("states_" + tag + ".json");
    summary.push_back({{"delta", deltas[i]},
                       {"rows", runs[i].size()},
                       {"final_loss", runs[i].loss.back()},
                       {"final_norm", runs[i].norm.back()},
                       {"loss_non_increasing", loss_non_increasing(runs[i])}});
    log_of(ctx) << "delta " << deltas[i] << ": " << runs[i].size() << " rows, final loss " << runs[i].loss.back()
                << '\n';
  }
  write_json(man.path("simulate.json"), {{"mode", cfg.run.mode == RunMode::Ode ? "ode" : "gd"}, {"runs", summary}});
  man.add_file("simulate.json");
  man.write();
  return 0;
}

int run_kkt(const ExperimentConfig& cfg, const RunContext& ctx) {
  const Problem prob = build_problem(cfg, ctx.seed);
  const std::uint64_t seed = ctx.seed.value_or(cfg.init.seed);
  const Vector u0 = initial_direction(cfg, prob.model.num_weights(), ctx.seed);
  RunManifest man(ctx.out_dir, "kkt", cfg.source_text);
  man.add_seed("init", seed);

  KktOptions opt;
  opt.ode.rel_tol *= ctx.tol_scale;
  opt.ode.abs_tol *= ctx.tol_scale;
  const KKTReport rep = find_kkt(prob, u0, opt);
  nlohmann::json j = to_json(rep);
  j["model_hash"] = hex64(model_hash(prob.model));
  j["model"] = prob.model.describe();
  j["seed"] = seed;
  if (prob.model.is_feed_forward()) {
    const int p = prob.model.feed_forward().activation.power;
    j["balance_residual"] = balance_check(prob.model, rep.point, p);
    j["mask"] = to_json(extract_mask(prob.model, rep.point, cfg.analysis.rel_threshold));
  }
  write_json(man.path("kkt.json"), j);
  write_snapshot(man.path("kkt_point.bin"), rep.point, prob.model.layout());
  for (const char* f : {"kkt.json", "kkt_point.bin", "kkt_point.json"}) man.add_file(f);
  man.write();
  log_of(ctx) << "N(w*) = " << rep.value << ", residual " << rep.residual << ", delta " << rep.delta_gap << " ("
              << to_string(rep.sign) << ", " << to_string(rep.order) << ")\n";
  return 0;
}

int run_escape_sweep(const ExperimentConfig& cfg, const RunContext& ctx) {
  const Problem prob = build_problem(cfg, ctx.seed);
  const Vector u0 = initial_direction(cfg, prob.model.num_weights(), ctx.seed);
  RunManifest man(ctx.out_dir, "escape-sweep", cfg.source_text);
  man.add_seed("init", ctx.seed.value_or(cfg.init.seed));

  EscapeSweepOptions opt;
  opt.integrator = scaled_integrator(cfg, ctx);
  opt.jobs = ctx.jobs;
  const EscapeSweep sweep = escape_scaling_fit(prob, u0, cfg.init.deltas, opt);
  write_json(man.path("escape_sweep.json"), to_json(sweep));
  {
    std::ostringstream csv;
    csv << std::setprecision(17) << "delta,regressor,escape_time,predicted\n";
    for (std::size_t i = 0; i < sweep.deltas.size(); ++i)
      csv << sweep.deltas[i] << ',' << sweep.regressor[i] << ',' << sweep.times[i] << ',' << sweep.predicted[i]
          << '\n';
    std::ofstream(man.path("escape_sweep.csv")) << csv.str();
  }
  man.add_file("escape_sweep.json");
  man.add_file("escape_sweep.csv");
  man.write();
  log_of(ctx) << "slope " << sweep.fit.slope << " (theory " << sweep.theory_slope << "), R^2 " << sweep.fit.r2 << '\n';
  return 0;
}

int run_sparsity_report(const ExperimentConfig& cfg, const RunContext& ctx) {
  const Problem prob = build_problem(cfg, ctx.seed);
  require(prob.model.is_feed_forward(), ErrorCode::ConfigError, "sparsity-report needs a feedforward model");
  const Vector u0 = initial_direction(cfg, prob.model.num_weights(), ctx.seed);
  const double delta = cfg.init.deltas.front();
  RunManifest man(ctx.out_dir, "sparsity-report", cfg.source_text);
  man.add_seed("init", ctx.seed.value_or(cfg.init.seed));
  man.add_seed("data", ctx.seed.value_or(cfg.data.seed));

  SparsityExperimentOptions opt;
  opt.lr = cfg.run.lr;
  opt.max_iters = cfg.run.iters;
  opt.record_every = cfg.run.record_every;
  opt.rel_threshold = cfg.analysis.rel_threshold;
  opt.saddle_eps = cfg.analysis.saddle_eps;
  SparsityExperiment ex;
  if (cfg.run.mode == RunMode::Gd) {
    ex = sparsity_experiment(prob, delta * u0, opt);
  } else {
    IntegratorConfig ic = scaled_integrator(cfg, ctx);
    ic.store_states = true;
    ex = analyze_sparsity(prob, integrate_training_flow(prob, delta * u0, cfg.run.t_end, ic), opt);
  }

  const auto& act = prob.model.feed_forward().activation;
  const bool theory_covers = act.power >= 2;  // ReLU-type runs are report-only
  const auto& blocks = prob.model.layout().blocks;
  const Vector& wb = ex.traj.states[ex.traj.find_time(ex.report.t_before)];
  const Vector& wa = ex.traj.states[ex.traj.find_time(ex.report.t_after)];
  for (const auto& b : blocks) {
    const std::string l = std::to_string(b.layer);
    write_matrix_csv(man.path("heatmap_before_W" + l + ".csv"), layer_matrix(wb, b).cwiseAbs());
    write_matrix_csv(man.path("heatmap_after_W" + l + ".csv"), layer_matrix(wa, b).cwiseAbs());
    man.add_file("heatmap_before_W" + l + ".csv");
    man.add_file("heatmap_after_W" + l + ".csv");
  }
  nlohmann::json j = to_json(ex.report);
  j["saddle"] = to_json(ex.saddle);
  j["eta"] = ex.eta;
  j["loss_at_origin"] = ex.loss_at_origin;
  j["iter_before"] = ex.iter_before;
  j["iter_after"] = ex.iter_after;
  j["delta"] = delta;
  j["mode"] = theory_covers ? "verdict" : "report_only";
  j["active_neurons_before"] = ex.report.mask_before.active_neurons(prob.model);
  j["active_neurons_after"] = ex.report.mask_after.active_neurons(prob.model);
  write_json(man.path("sparsity_report.json"), j);
  write_trajectory_csv(man.path("trajectory.csv"), ex.traj);
  man.add_file("sparsity_report.json");
  man.add_file("trajectory.csv");
  man.write();
  log_of(ctx) << "mask before == mask after: " << (ex.report.equal ? "yes" : "no")
              << (theory_covers ? "" : " (report only)") << '\n';
  return 0;
}

int run_lemma_probe(const ExperimentConfig& cfg, const RunContext& ctx) {
  const Problem prob = build_problem(cfg, ctx.seed);
  const std::uint64_t seed = ctx.seed.value_or(cfg.init.seed);
  const Vector u0 = initial_direction(cfg, prob.model.num_weights(), ctx.seed);
  RunManifest man(ctx.out_dir, "lemma-probe", cfg.source_text);
  man.add_seed("probe", seed);

  const KKTReport kkt = find_kkt(prob, u0);
  nlohmann::json j;
  j["kkt"] = to_json(kkt);
  if (kkt.order == KktOrder::SecondOrder && kkt.sign == NcfSign::Positive) {
    j["inequalities"] = to_json(inequality_probe(prob, kkt.point, cfg.analysis.gamma, cfg.analysis.probe_samples, seed));
    const Vector g = ncf_grad(prob, kkt.point);
    const Vector hw = ncf_hessian(prob, kkt.point) * kkt.point;
    j["hessian_euler_relative"] = (hw - (kkt.degree - 1) * g).norm() / std::max(g.norm(), 1e-300);
    j["hessian_norm_bound"] = kkt.degree * (kkt.degree - 1) * kkt.value;
  } else {
    j["inequalities"] = nullptr;
    j["note"] = "start direction did not reach a positive second-order KKT point";
  }
  Vector p = u0;
  Vector q = p;
  q(0) += 1e-6;
  const LipschitzProbe lp = flow_lipschitz_probe(prob, p, q, cfg.analysis.lipschitz_horizon, scaled_integrator(cfg, ctx));
  j["lipschitz"] = {{"max_ratio", lp.max_ratio}, {"ratio_at_zero", lp.ratio_at_zero}, {"worst_time", lp.worst_time},
                    {"horizon", cfg.analysis.lipschitz_horizon}};
  write_json(man.path("lemma_probe.json"), j);
  man.add_file("lemma_probe.json");
  man.write();
  log_of(ctx) << j.dump(2) << '\n';
  return 0;
}

int run_oracle_check(const RunContext& ctx) {
  std::ostream& out = log_of(ctx);
  nlohmann::json results = nlohmann::json::array();
  bool all = true;
  const auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
    results.push_back({{"check", name}, {"pass", ok}, {"detail", detail}});
    all &= ok;
  };
  const auto fmt = [](double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
  };

  const Problem ex = example1_problem();
  IntegratorConfig grid;
  for (int i = 0; i <= 300; ++i) grid.checkpoint_times.push_back(0.01 * i);
  for (double d : {0.1, 0.05, 0.001}) {
    const Trajectory a = integrate_training_flow(ex, d * example1_w0(), 3.0, grid);
    const Trajectory b = integrate_training_flow(ex, d * example1_wstar(), 3.0, grid);
    double ea = 0.0, eb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      ea = std::max(ea, (a.states[i] - Vector(example1_psi_w0(a.times[i], d))).cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < b.size(); ++i)
      eb = std::max(eb, (b.states[i] - Vector(example1_psi_wstar(b.times[i], d))).cwiseAbs().maxCoeff());
    report("example1_closed_form_delta_" + fmt(d), ea <= 1e-6 && eb <= 1e-6,
           "sup error " + fmt(ea) + " / " + fmt(eb));
  }

  const KKTReport k1 = find_kkt(ex, example1_w0());
  report("example1_kkt_w0", (k1.point - example1_wstar()).norm() <= 1e-8 && std::abs(k1.value - 8.0) <= 1e-8 &&
                                std::abs(k1.delta_gap - 12.0) <= 1e-6,
         "N " + fmt(k1.value) + ", delta " + fmt(k1.delta_gap));
  const KKTReport k2 = find_kkt(ex, Eigen::Vector2d(0.0, 1.0));
  report("example1_kkt_first_order_only",
         k2.order == KktOrder::FirstOrderOnly && std::abs(k2.delta_gap + 12.0) <= 1e-6,
         "delta " + fmt(k2.delta_gap));

  const Trajectory p = estimate_p_path(ex, example1_wstar(), 1e-5, {0.0});
  const double perr = (p.states[0] - Vector(example1_p(0.0))).norm();
  report("example1_p0", perr <= 1e-3, "error " + fmt(perr));

  // Closed forms satisfy w' = -grad L (central differences in t).
  double res = 0.0;
  for (double t : {0.05, 0.2, 0.5, 1.0}) {
    const double h = 1e-6;
    const Vector dw = (Vector(example1_psi_w0(t + h, 0.1)) - Vector(example1_psi_w0(t - h, 0.1))) / (2 * h);
    res = std::max(res, (dw + training_grad(ex, example1_psi_w0(t, 0.1))).norm());
  }
  report("example1_closed_form_ode_residual", res <= 1e-6, "residual " + fmt(res));

  Matrix X(3, 4);
  X << 1.0, 0.5, 2.0, 0.1, 0.3, -0.7, 0.2, 0.9, -0.4, 0.1, 0.6, -0.8;
  const DeadNeuronCase dn = dead_neuron_case(Dataset(X, Eigen::Vector4d(1.0, -1.0, 0.5, 2.0)), 7);
  report("dead_neuron_fixed_point", dn.max_drift < 1e-12 && dn.zero_kkt, "drift " + fmt(dn.max_drift));

  report("predicted_escape_times",
         std::abs(predicted_escape_time(2, 8.0, 1e-3) - std::log(1000.0) / 16.0) <= 1e-12 &&
             std::abs(predicted_escape_time(3, 8.0, 0.01) - 100.0 / 24.0) <= 1e-12,
         "L=2 and L=3 formulas");

  if (!ctx.out_dir.empty()) {
    RunManifest man(ctx.out_dir, "oracle-check", "");
    write_json(man.path("oracle_check.json"), {{"all_pass", all}, {"checks", results}});
    man.add_file("oracle_check.json");
    man.write();
  }
  out << (all ? "oracle-check: all checks passed" : "oracle-check: FAILURES present") << '\n';
  return all ? 0 : 3;
}

}  // namespace homoflow::labkit
