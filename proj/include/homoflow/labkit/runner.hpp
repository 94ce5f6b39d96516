#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "homoflow/labkit/config.hpp"

namespace homoflow::labkit {

inline constexpr const char* kToolVersion = "0.3.0";

struct RunContext {
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  double tol_scale = 1.0;
  std::ostream* log = nullptr;
};

/// Output root: --out, else the config output dir, else $HOMOFLOW_OUT/<name>, else ./out/<name>.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& cli);

/// Each returns the process exit status (0 ok, 3 for failed checks).
int run_simulate(const ExperimentConfig& cfg, const RunContext& ctx);
int run_kkt(const ExperimentConfig& cfg, const RunContext& ctx);
int run_escape_sweep(const ExperimentConfig& cfg, const RunContext& ctx);
int run_sparsity_report(const ExperimentConfig& cfg, const RunContext& ctx);
int run_lemma_probe(const ExperimentConfig& cfg, const RunContext& ctx);
int run_oracle_check(const RunContext& ctx);

}  // namespace homoflow::labkit
