#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "homoflow/escape.hpp"
#include "homoflow/sparsity.hpp"

namespace homoflow::labkit {

using json = nlohmann::json;

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

json to_json(const WeightLayout& layout);
json to_json(const KKTReport& rep);
json to_json(const EscapeSweep& sweep);
json to_json(const SparsityMask& mask);
json to_json(const PreservationReport& rep);
json to_json(const SaddleRecord& rec);
json to_json(const InequalityProbeReport& rep);
json vector_json(const Vector& v);

/// Columns t, norm, loss, grad_norm, cos_to_target (plus iter for GD runs).
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);

/// Raw little-endian float64 states (rows x k) next to a JSON header.
void write_state_sidecar(const std::filesystem::path& bin_path, const Trajectory& traj);
void write_snapshot(const std::filesystem::path& bin_path, const Vector& w, const WeightLayout& layout);
Vector read_snapshot(const std::filesystem::path& bin_path);

/// |W_l| grid, one CSV row per matrix row.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
void write_json(const std::filesystem::path& path, const json& j);

/// Tracks every artifact written during a run and emits manifest.json.
class RunManifest {
 public:
  RunManifest(std::filesystem::path out_dir, std::string command, std::string config_text);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }
  void add_file(const std::string& name);
  void add_seed(const std::string& key, std::uint64_t seed);
  void set(const std::string& key, json value);
  std::string config_hash() const;
  void write() const;

 private:
  std::filesystem::path dir_;
  std::string command_;
  std::string config_text_;
  std::vector<std::string> files_;
  json seeds_ = json::object();
  json extra_ = json::object();
};

}  // namespace homoflow::labkit
