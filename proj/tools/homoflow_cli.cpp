#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "homoflow/labkit/runner.hpp"

namespace lk = homoflow::labkit;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  double tol_scale = 1.0;
};

void add_common(CLI::App* sub, Flags& f, bool config_required) {
  auto* opt = sub->add_option("--config", f.config, "experiment config (JSON, comments allowed)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory (overrides config and HOMOFLOW_OUT)");
  sub->add_option("--seed", f.seed, "override init and data seeds");
  sub->add_option("--jobs", f.jobs, "worker threads for sweeps")->check(CLI::PositiveNumber);
  sub->add_option("--tol-scale", f.tol_scale, "multiply integrator tolerances")->check(CLI::PositiveNumber);
}

int exit_code_for(homoflow::ErrorCode c) {
  using homoflow::ErrorCode;
  return (c == ErrorCode::ConfigError || c == ErrorCode::IoError) ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"homoflow: gradient-flow lab for homogeneous networks under small initialization"};
  app.require_subcommand(1);
  Flags f;
  auto* simulate = app.add_subcommand("simulate", "integrate the training flow or run gradient descent");
  auto* kkt = app.add_subcommand("kkt", "find and certify a KKT point of the constrained NCF");
  auto* sweep = app.add_subcommand("escape-sweep", "escape time versus delta regression");
  auto* sparsity = app.add_subcommand("sparsity-report", "masks before escape and at the first saddle");
  auto* oracle = app.add_subcommand("oracle-check", "closed-form verification suite");
  auto* lemma = app.add_subcommand("lemma-probe", "local inequality and Lipschitz probes around a KKT point");
  for (auto* s : {simulate, kkt, sweep, sparsity, lemma}) add_common(s, f, true);
  add_common(oracle, f, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    lk::RunContext ctx;
    ctx.seed = f.seed;
    ctx.jobs = f.jobs;
    ctx.tol_scale = f.tol_scale;
    ctx.log = &std::cout;
    if (oracle->parsed()) {
      if (!f.out.empty()) ctx.out_dir = f.out;
      return lk::run_oracle_check(ctx);
    }
    const lk::ExperimentConfig cfg = lk::load_config(f.config);
    ctx.out_dir = lk::resolve_output_dir(cfg, f.out.empty() ? std::nullopt : std::optional<std::filesystem::path>(f.out));
    if (simulate->parsed()) return lk::run_simulate(cfg, ctx);
    if (kkt->parsed()) return lk::run_kkt(cfg, ctx);
    if (sweep->parsed()) return lk::run_escape_sweep(cfg, ctx);
    if (sparsity->parsed()) return lk::run_sparsity_report(cfg, ctx);
    if (lemma->parsed()) return lk::run_lemma_probe(cfg, ctx);
  } catch (const homoflow::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
