#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "homoflow/flow.hpp"
#include "homoflow/oracle.hpp"

namespace homoflow::labkit {

enum class DataKind { File, Inline, SphereTeacher, Preset };

struct DataSpec {
  DataKind kind = DataKind::Preset;
  std::filesystem::path path;  // File: one row per sample, label last
  Matrix X;                    // Inline
  Vector y;
  Index n = 100;               // SphereTeacher
  Index d = 20;
  Index teacher_width = 2;
  std::uint64_t seed = 0;
  std::string preset;          // Preset: "example1" or "cubic"
};

struct InitSpec {
  std::optional<Vector> direction;  // normalized on use
  std::uint64_t seed = 0;
  std::vector<double> deltas{1e-3};
};

enum class RunMode { Ode, Gd };

struct RunSpec {
  RunMode mode = RunMode::Ode;
  double t_end = 5.0;
  double lr = 5e-3;
  long iters = 10'000;
  long record_every = 1;
  IntegratorConfig integrator;
};

struct AnalysisSpec {
  bool kkt = true;
  bool escape_sweep = false;
  bool sparsity = false;
  bool lemma_probes = false;
  double gamma = 1e-3;
  long probe_samples = 1000;
  double rel_threshold = 1e-2;
  std::optional<double> saddle_eps;
  double lipschitz_horizon = 1.0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Model::Spec model = MonomialNet{};
  Loss loss;
  DataSpec data;
  InitSpec init;
  RunSpec run;
  AnalysisSpec analysis;
  std::filesystem::path output_dir;
  std::string source_text;  // verbatim file contents, hashed into the manifest
};

/// JSON with // and /* */ comments allowed. Throws Error(ConfigError).
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Materializes model, loss and data. `seed_override` replaces data seeds.
Problem build_problem(const ExperimentConfig& cfg, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Unit initial direction from the explicit vector or the init seed.
Vector initial_direction(const ExperimentConfig& cfg, Index k, std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace homoflow::labkit
