#include "homoflow/labkit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace homoflow::labkit {

namespace {

using json = nlohmann::json;

[[noreturn]] void config_error(const std::string& where, const std::string& what) {
  fail(ErrorCode::ConfigError, where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(where, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items())
    if (!ok.count(key)) config_error(where, "unknown key '" + key + "'");
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(where + "." + key, e.what());
  }
}

Vector to_vector(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.empty()) config_error(where, "expected a non-empty numeric array");
  Vector v(static_cast<Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) config_error(where, "entry " + std::to_string(i) + " is not a number");
    v(static_cast<Index>(i)) = arr[i].get<double>();
  }
  return v;
}

Activation parse_activation(const json& j, const std::string& where) {
  Activation a;
  if (j.is_null()) return a;
  check_keys(j, where, {"power", "slope", "derivative_at_zero"});
  a.power = get_or<int>(j, "power", 1, where);
  a.slope = get_or<double>(j, "slope", 0.0, where);
  if (j.contains("derivative_at_zero")) a.derivative_at_zero = get_or<double>(j, "derivative_at_zero", 0.0, where);
  if (a.power < 1) config_error(where + ".power", "must be >= 1");
  return a;
}

Model::Spec parse_model(const json& j) {
  const std::string where = "model";
  if (!j.is_object()) config_error(where, "missing or not an object");
  const std::string kind = get_or<std::string>(j, "kind", "", where);
  if (kind == "feedforward") {
    check_keys(j, where, {"kind", "layer_dims", "activation"});
    FeedForwardNet net;
    net.layer_dims = get_or<std::vector<Index>>(j, "layer_dims", {}, where);
    net.activation = parse_activation(j.value("activation", json()), where + ".activation");
    if (net.layer_dims.size() < 3) config_error(where + ".layer_dims", "need at least [d, hidden, 1]");
    return net;
  }
  if (kind == "monomial") {
    check_keys(j, where, {"kind", "exponent", "dim", "rectified"});
    return MonomialNet{get_or<int>(j, "exponent", 2, where), get_or<Index>(j, "dim", 1, where),
                       get_or<bool>(j, "rectified", false, where)};
  }
  if (kind == "single_neuron") {
    check_keys(j, where, {"kind", "dim", "activation"});
    SingleNeuron s;
    s.dim = get_or<Index>(j, "dim", 1, where);
    if (j.contains("activation")) s.activation = parse_activation(j["activation"], where + ".activation");
    return s;
  }
  config_error(where + ".kind", "expected feedforward, monomial or single_neuron, got '" + kind + "'");
}

DataSpec parse_data(const json& j, const std::filesystem::path& base) {
  const std::string where = "data";
  if (!j.is_object()) config_error(where, "missing or not an object");
  DataSpec d;
  const std::string kind = get_or<std::string>(j, "kind", "", where);
  if (kind == "preset") {
    check_keys(j, where, {"kind", "name"});
    d.kind = DataKind::Preset;
    d.preset = get_or<std::string>(j, "name", "", where);
    if (d.preset != "example1" && d.preset != "cubic") config_error(where + ".name", "unknown preset '" + d.preset + "'");
  } else if (kind == "file") {
    check_keys(j, where, {"kind", "path"});
    d.kind = DataKind::File;
    d.path = base / get_or<std::string>(j, "path", "", where);
    if (!std::filesystem::exists(d.path)) config_error(where + ".path", "file not found: " + d.path.string());
  } else if (kind == "inline") {
    check_keys(j, where, {"kind", "points", "labels"});
    d.kind = DataKind::Inline;
    const json& pts = j.value("points", json());
    if (!pts.is_array() || pts.empty()) config_error(where + ".points", "expected a non-empty array of points");
    const Vector first = to_vector(pts[0], where + ".points[0]");
    d.X.resize(first.size(), static_cast<Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vector p = to_vector(pts[i], where + ".points[" + std::to_string(i) + "]");
      if (p.size() != first.size()) config_error(where + ".points", "points have different dimensions");
      d.X.col(static_cast<Index>(i)) = p;
    }
    d.y = to_vector(j.value("labels", json()), where + ".labels");
    if (d.y.size() != d.X.cols()) config_error(where + ".labels", "label count differs from point count");
  } else if (kind == "sphere_teacher") {
    check_keys(j, where, {"kind", "n", "d", "teacher_width", "seed"});
    d.kind = DataKind::SphereTeacher;
    d.n = get_or<Index>(j, "n", 100, where);
    d.d = get_or<Index>(j, "d", 20, where);
    d.teacher_width = get_or<Index>(j, "teacher_width", 2, where);
    d.seed = get_or<std::uint64_t>(j, "seed", 0, where);
  } else {
    config_error(where + ".kind", "expected preset, file, inline or sphere_teacher, got '" + kind + "'");
  }
  return d;
}

Dataset read_csv_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot open data file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty()) continue;  // header line
      fail(ErrorCode::ConfigError, path.string() + ": non-numeric cell in '" + line + "'");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      fail(ErrorCode::ConfigError, path.string() + ": ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().size() < 2)
    fail(ErrorCode::ConfigError, path.string() + ": need at least one row with features and a label");
  const Index n = static_cast<Index>(rows.size());
  const Index d = static_cast<Index>(rows.front().size()) - 1;
  Matrix X(d, n);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index r = 0; r < d; ++r) X(r, i) = rows[i][r];
    y(i) = rows[i][d];
  }
  return Dataset(std::move(X), std::move(y));
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config", {"name", "model", "loss", "data", "init", "run", "analysis", "output"});

  ExperimentConfig cfg;
  cfg.source_text = text;
  cfg.name = get_or<std::string>(root, "name", "experiment", "config");
  cfg.model = parse_model(root.value("model", json()));
  try {
    cfg.loss = parse_loss(get_or<std::string>(root, "loss", "square", "config"));
  } catch (const Error& e) {
    config_error("loss", e.what());
  }
  cfg.data = parse_data(root.value("data", json()), base_dir);

  if (root.contains("init")) {
    const json& j = root["init"];
    check_keys(j, "init", {"direction", "seed", "deltas"});
    if (j.contains("direction")) cfg.init.direction = to_vector(j["direction"], "init.direction");
    cfg.init.seed = get_or<std::uint64_t>(j, "seed", 0, "init");
    if (j.contains("deltas")) {
      cfg.init.deltas = get_or<std::vector<double>>(j, "deltas", {}, "init");
      if (cfg.init.deltas.empty()) config_error("init.deltas", "must not be empty");
    }
  }
  for (double d : cfg.init.deltas)
    if (!(d > 0.0 && d < 1.0)) config_error("init.deltas", "every delta must lie in (0, 1)");

  if (root.contains("run")) {
    const json& j = root["run"];
    check_keys(j, "run", {"mode", "t_end", "lr", "iters", "record_every", "rel_tol", "abs_tol", "max_step",
                          "blowup_norm_cap", "checkpoints"});
    const std::string mode = get_or<std::string>(j, "mode", "ode", "run");
    if (mode == "ode")
      cfg.run.mode = RunMode::Ode;
    else if (mode == "gd")
      cfg.run.mode = RunMode::Gd;
    else
      config_error("run.mode", "expected ode or gd");
    cfg.run.t_end = get_or<double>(j, "t_end", cfg.run.t_end, "run");
    cfg.run.lr = get_or<double>(j, "lr", cfg.run.lr, "run");
    cfg.run.iters = get_or<long>(j, "iters", cfg.run.iters, "run");
    cfg.run.record_every = get_or<long>(j, "record_every", cfg.run.record_every, "run");
    auto& ic = cfg.run.integrator;
    ic.rel_tol = get_or<double>(j, "rel_tol", ic.rel_tol, "run");
    ic.abs_tol = get_or<double>(j, "abs_tol", ic.abs_tol, "run");
    ic.max_step = get_or<double>(j, "max_step", ic.max_step, "run");
    ic.blowup_norm_cap = get_or<double>(j, "blowup_norm_cap", ic.blowup_norm_cap, "run");
    ic.checkpoint_times = get_or<std::vector<double>>(j, "checkpoints", {}, "run");
    if (!(ic.rel_tol > 0.0 && ic.abs_tol > 0.0)) config_error("run", "tolerances must be positive");
    if (!(cfg.run.t_end > 0.0)) config_error("run.t_end", "must be positive");
    if (!(cfg.run.lr > 0.0)) config_error("run.lr", "must be positive");
    if (cfg.run.iters < 0 || cfg.run.record_every < 1) config_error("run", "iters >= 0 and record_every >= 1 required");
  }

  if (root.contains("analysis")) {
    const json& j = root["analysis"];
    check_keys(j, "analysis", {"kkt", "escape_sweep", "sparsity", "lemma_probes", "gamma", "probe_samples",
                               "rel_threshold", "saddle_eps", "lipschitz_horizon"});
    auto& a = cfg.analysis;
    a.kkt = get_or<bool>(j, "kkt", a.kkt, "analysis");
    a.escape_sweep = get_or<bool>(j, "escape_sweep", a.escape_sweep, "analysis");
    a.sparsity = get_or<bool>(j, "sparsity", a.sparsity, "analysis");
    a.lemma_probes = get_or<bool>(j, "lemma_probes", a.lemma_probes, "analysis");
    a.gamma = get_or<double>(j, "gamma", a.gamma, "analysis");
    a.probe_samples = get_or<long>(j, "probe_samples", a.probe_samples, "analysis");
    a.rel_threshold = get_or<double>(j, "rel_threshold", a.rel_threshold, "analysis");
    if (j.contains("saddle_eps")) a.saddle_eps = get_or<double>(j, "saddle_eps", 0.0, "analysis");
    a.lipschitz_horizon = get_or<double>(j, "lipschitz_horizon", a.lipschitz_horizon, "analysis");
    if (!(a.rel_threshold > 0.0 && a.rel_threshold < 1.0)) config_error("analysis.rel_threshold", "must lie in (0, 1)");
  }

  if (root.contains("output")) {
    check_keys(root["output"], "output", {"dir"});
    cfg.output_dir = get_or<std::string>(root["output"], "dir", "", "output");
    if (!cfg.output_dir.empty() && cfg.output_dir.is_relative()) cfg.output_dir = base_dir / cfg.output_dir;
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

Problem build_problem(const ExperimentConfig& cfg, std::optional<std::uint64_t> seed_override) {
  Model model(cfg.model);
  const DataSpec& d = cfg.data;
  switch (d.kind) {
    case DataKind::Preset:
      return Problem(std::move(model), cfg.loss, Dataset(Matrix::Identity(2, 2), Eigen::Vector2d(4.0, 1.0)));
    case DataKind::File:
      return Problem(std::move(model), cfg.loss, read_csv_dataset(d.path));
    case DataKind::Inline:
      return Problem(std::move(model), cfg.loss, Dataset(d.X, d.y));
    case DataKind::SphereTeacher:
      return Problem(std::move(model), cfg.loss,
                     generate_figure1_dataset(seed_override.value_or(d.seed), d.n, d.d, d.teacher_width).data);
  }
  fail(ErrorCode::ConfigError, "unhandled data kind");
}

Vector initial_direction(const ExperimentConfig& cfg, Index k, std::optional<std::uint64_t> seed_override) {
  if (cfg.init.direction) {
    const Vector& v = *cfg.init.direction;
    if (v.size() != k)
      fail(ErrorCode::ConfigError, "init.direction has length " + std::to_string(v.size()) + ", model has " +
                                       std::to_string(k) + " weights");
    if (v.norm() == 0.0) fail(ErrorCode::ConfigError, "init.direction must be non-zero");
    return v / v.norm();
  }
  return random_direction(k, seed_override.value_or(cfg.init.seed));
}

}  // namespace homoflow::labkit
