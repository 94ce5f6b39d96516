#pragma once

#include <optional>
#include <vector>

#include "homoflow/escape.hpp"

namespace homoflow {

/// Hidden neurons per hidden layer, 0-based; entry l-1 belongs to layer l.
struct NeuronSelection {
  std::vector<std::vector<Index>> per_layer;
};

/// Flat indices of row j of W_l and column j of W_{l+1} for every selected j.
/// Sorted and unique.
std::vector<Index> zero_preserving_indices(const Model& model, const NeuronSelection& sel);

struct ZeroPreservationResult {
  double max_abs = 0.0;  // largest |w_i| over the masked block and the run
  bool bitwise_zero = true;
  long checks = 0;
};

/// Gradient descent from w0 (masked block exactly zero). Throws ZeroLeak on
/// any non-zero masked entry.
ZeroPreservationResult verify_zero_preserving_gd(const Problem& prob, const NeuronSelection& sel, const Vector& w0,
                                                 double lr, long n_iters);

/// Gradient flow from w0; throws ZeroLeak when the block exceeds `tol`. Meant
/// for power >= 2, since a kinked activation makes the vector field discontinuous.
ZeroPreservationResult verify_zero_preserving_ode(const Problem& prob, const NeuronSelection& sel, const Vector& w0,
                                                  double t_end, const IntegratorConfig& cfg = {},
                                                  double tol = 1e-13);

/// Largest |‖W_l[j,:]‖^2 - p ‖W_{l+1}[:,j]‖^2| over hidden neurons.
double balance_check(const Model& model, const Vector& w, int p);

struct LayerMask {
  int layer = 0;                   // hidden layer l
  std::vector<Index> zero_rows;    // rows of W_l
  std::vector<Index> zero_cols;    // columns of W_{l+1}
  bool operator==(const LayerMask&) const = default;
};

struct SparsityMask {
  std::vector<LayerMask> layers;
  double threshold = 0.0;
  bool pairing_consistent = true;

  bool same_pattern(const SparsityMask& other) const { return layers == other.layers; }
  /// Neurons whose row and column are both non-zero, per hidden layer.
  std::vector<std::vector<Index>> active_neurons(const Model& model) const;
};

/// A row (column) is zero when its norm is <= rel_threshold times the largest
/// row (column) norm of that layer. Throws DegenerateLayer when that maximum is 0.
SparsityMask extract_mask(const Model& model, const Vector& w, double rel_threshold = 1e-2);

/// Norm of the weights that `mask` calls zero, relative to the whole vector.
double masked_block_ratio(const Model& model, const Vector& w, const SparsityMask& mask);

struct PreservationReport {
  double t_before = 0.0;
  double t_after = 0.0;
  SparsityMask mask_before;
  SparsityMask mask_after;
  bool equal = false;
  double ratio_before = 0.0;
  double ratio_after = 0.0;
};

/// Masks at two recorded times. Throws CheckpointMissing when a time is absent.
PreservationReport preservation_report(const Model& model, const Trajectory& traj, double t_before, double t_after,
                                       double rel_threshold = 1e-2);

struct SparsityExperimentOptions {
  double lr = 5e-3;
  long max_iters = 2'000'000;
  long record_every = 50;
  double eta_fraction = 0.05;
  double rel_threshold = 1e-2;
  std::optional<double> saddle_eps;  // default 1e-4 (1 + L(0))
};

struct SparsityExperiment {
  Trajectory traj;
  PreservationReport report;
  SaddleRecord saddle;
  double loss_at_origin = 0.0;
  double eta = 0.0;
  long iter_before = 0;
  long iter_after = 0;
};

/// Before-escape row: latest row ahead of the saddle with L >= L(0) - eta.
/// After: the first saddle. `traj` must hold states.
SparsityExperiment analyze_sparsity(const Problem& prob, Trajectory traj, const SparsityExperimentOptions& opt,
                                    std::optional<double> saddle_window = std::nullopt);

/// Gradient descent from w0 until the first saddle after escape, then compares
/// the mask just before escape with the mask at that saddle.
SparsityExperiment sparsity_experiment(const Problem& prob, const Vector& w0,
                                       const SparsityExperimentOptions& opt = {});

}  // namespace homoflow
