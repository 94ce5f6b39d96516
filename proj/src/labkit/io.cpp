#include "homoflow/labkit/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "homoflow/labkit/runner.hpp"

namespace homoflow::labkit {

namespace {

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

// JSON has no NaN or infinity; emit null for them.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

json vector_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(number(v(i)));
  return arr;
}

json to_json(const WeightLayout& layout) {
  json blocks = json::array();
  for (const auto& b : layout.blocks)
    blocks.push_back({{"layer", b.layer}, {"rows", b.rows}, {"cols", b.cols}, {"offset", b.offset}});
  return {{"order", "layer-major, row-major"}, {"size", layout.size()}, {"blocks", blocks}};
}

json to_json(const KKTReport& r) {
  return {{"point", vector_json(r.point)},
          {"value", number(r.value)},
          {"residual", number(r.residual)},
          {"delta_gap", number(r.delta_gap)},
          {"hessian_norm", number(r.hessian_norm)},
          {"degree", r.degree},
          {"sign", to_string(r.sign)},
          {"order", to_string(r.order)},
          {"steps", r.steps},
          {"flow_time", number(r.flow_time)}};
}

json to_json(const EscapeSweep& s) {
  json runs = json::array();
  for (std::size_t i = 0; i < s.deltas.size(); ++i)
    runs.push_back({{"delta", s.deltas[i]},
                    {"regressor", s.regressor[i]},
                    {"escape_time", s.times[i]},
                    {"predicted", s.predicted[i]}});
  return {{"degree", s.degree},
          {"ncf_star", s.ncf_star},
          {"wstar", vector_json(s.wstar)},
          {"eta", s.eta},
          {"runs", runs},
          {"slope", s.fit.slope},
          {"intercept", s.fit.intercept},
          {"r2", s.fit.r2},
          {"theory_slope", s.theory_slope},
          {"slope_relative_error", s.slope_relative_error()},
          {"pass", s.slope_relative_error() <= 0.05 && s.fit.r2 >= 0.99}};
}

json to_json(const SparsityMask& m) {
  json layers = json::array();
  for (const auto& l : m.layers)
    layers.push_back({{"layer", l.layer}, {"zero_rows", l.zero_rows}, {"zero_cols", l.zero_cols}});
  return {{"threshold", m.threshold}, {"pairing_consistent", m.pairing_consistent}, {"layers", layers}};
}

json to_json(const PreservationReport& r) {
  return {{"t_before", r.t_before},   {"t_after", r.t_after},           {"mask_before", to_json(r.mask_before)},
          {"mask_after", to_json(r.mask_after)}, {"equal", r.equal}, {"ratio_before", r.ratio_before},
          {"ratio_after", r.ratio_after}};
}

json to_json(const SaddleRecord& s) {
  return {{"kind", s.kind == SaddleKind::Finite ? "finite" : "at_infinity"},
          {"loss_at", s.loss_at},
          {"grad_norm_at", s.grad_norm_at},
          {"t_reached", s.t_reached},
          {"point_norm", s.point.size() ? s.point.norm() : 0.0}};
}

json to_json(const InequalityProbeReport& r) {
  return {{"gamma", r.gamma},
          {"samples", r.samples},
          {"delta", number(r.delta)},
          {"max_violation_cocoercive", r.max_violation_cocoercive},
          {"max_violation_alignment", r.max_violation_alignment},
          {"max_violation_value_gap", r.max_violation_value_gap},
          {"tolerance", r.tolerance},
          {"pass", r.pass()}};
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out = open_out(path);
  const bool gd = !traj.iterations.empty();
  out << "t,norm,loss,grad_norm,cos_to_target" << (gd ? ",iter" : "") << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << traj.times[i] << ',' << traj.norm[i] << ',' << traj.loss[i] << ',' << traj.grad_norm[i] << ',';
    if (std::isfinite(traj.cos_to_target[i])) out << traj.cos_to_target[i];
    if (gd) out << ',' << traj.iterations[i];
    out << '\n';
  }
}

void write_state_sidecar(const std::filesystem::path& bin_path, const Trajectory& traj) {
  require(traj.has_states(), ErrorCode::IoError, "trajectory has no stored states");
  std::ofstream out = open_out(bin_path, std::ios::out | std::ios::binary);
  for (const Vector& s : traj.states)
    out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(double)));
  json header = {{"dtype", "float64"},
                 {"byte_order", "little"},
                 {"rows", traj.states.size()},
                 {"cols", traj.layout.size()},
                 {"times", traj.times},
                 {"layout", to_json(traj.layout)}};
  write_json(std::filesystem::path(bin_path).replace_extension(".json"), header);
}

void write_snapshot(const std::filesystem::path& bin_path, const Vector& w, const WeightLayout& layout) {
  require(w.size() == layout.size(), ErrorCode::DimensionMismatch, "snapshot length does not match layout");
  std::ofstream out = open_out(bin_path, std::ios::out | std::ios::binary);
  out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
  write_json(std::filesystem::path(bin_path).replace_extension(".json"),
             {{"dtype", "float64"}, {"byte_order", "little"}, {"layout", to_json(layout)}});
}

Vector read_snapshot(const std::filesystem::path& bin_path) {
  std::ifstream hin(std::filesystem::path(bin_path).replace_extension(".json"));
  if (!hin) fail(ErrorCode::IoError, "missing snapshot header for " + bin_path.string());
  const json header = json::parse(hin);
  const Index k = header.at("layout").at("size").get<Index>();
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + bin_path.string());
  Vector w(k);
  in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(k * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(k * sizeof(double)))
    fail(ErrorCode::IoError, "snapshot " + bin_path.string() + " is truncated");
  return w;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out = open_out(path);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

RunManifest::RunManifest(std::filesystem::path out_dir, std::string command, std::string config_text)
    : dir_(std::move(out_dir)), command_(std::move(command)), config_text_(std::move(config_text)) {
  std::filesystem::create_directories(dir_);
}

void RunManifest::add_file(const std::string& name) {
  if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
}

void RunManifest::add_seed(const std::string& key, std::uint64_t seed) { seeds_[key] = seed; }

void RunManifest::set(const std::string& key, json value) { extra_[key] = std::move(value); }

std::string RunManifest::config_hash() const { return hex64(fnv1a(config_text_)); }

void RunManifest::write() const {
  std::vector<std::string> files = files_;
  std::sort(files.begin(), files.end());
  json j = {{"command", command_},  {"tool_version", kToolVersion}, {"config_hash", config_hash()},
            {"seeds", seeds_},      {"files", files},               {"details", extra_}};
  write_json(dir_ / "manifest.json", j);
}

}  // namespace homoflow::labkit
