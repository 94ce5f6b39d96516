#include "homoflow/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace homoflow {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajorMatrix> block_view(const Vector& w, const LayerBlock& b) {
  return {w.data() + b.offset, b.rows, b.cols};
}

void append_row_indices(const LayerBlock& b, Index j, std::vector<Index>& out) {
  for (Index c = 0; c < b.cols; ++c) out.push_back(b.index(j, c));
}

void append_col_indices(const LayerBlock& b, Index j, std::vector<Index>& out) {
  for (Index r = 0; r < b.rows; ++r) out.push_back(b.index(r, j));
}

double masked_max(const Vector& w, const std::vector<Index>& idx) {
  double m = 0.0;
  for (Index i : idx) m = std::max(m, std::abs(w(i)));
  return m;
}

const FeedForwardNet& require_ff(const Model& model) {
  require(model.is_feed_forward(), ErrorCode::InvalidArgument, "sparsity analysis needs a feed-forward network");
  return model.feed_forward();
}

}  // namespace

std::vector<Index> zero_preserving_indices(const Model& model, const NeuronSelection& sel) {
  const FeedForwardNet& net = require_ff(model);
  const int L = net.num_layers();
  require(static_cast<int>(sel.per_layer.size()) <= L - 1, ErrorCode::IndexOutOfRange,
          "selection names more hidden layers than the network has");
  const auto& blocks = model.layout().blocks;
  std::vector<Index> out;
  for (std::size_t h = 0; h < sel.per_layer.size(); ++h) {
    const int l = static_cast<int>(h) + 1;
    for (Index j : sel.per_layer[h]) {
      require(j >= 0 && j < net.layer_dims[l], ErrorCode::IndexOutOfRange,
              "neuron " + std::to_string(j) + " out of range for hidden layer " + std::to_string(l));
      append_row_indices(blocks[l - 1], j, out);
      append_col_indices(blocks[l], j, out);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ZeroPreservationResult verify_zero_preserving_gd(const Problem& prob, const NeuronSelection& sel, const Vector& w0,
                                                 double lr, long n_iters) {
  const std::vector<Index> idx = zero_preserving_indices(prob.model, sel);
  require(masked_max(w0, idx) == 0.0, ErrorCode::InvalidArgument, "masked block of w0 must be exactly zero");
  require(lr > 0.0 && n_iters >= 0, ErrorCode::InvalidArgument, "need lr > 0 and n_iters >= 0");
  ZeroPreservationResult res;
  Vector w = w0;
  for (long it = 0; it < n_iters; ++it) {
    const Vector g = training_grad(prob, w);
    require(g.allFinite(), ErrorCode::NonFiniteState, "gradient descent diverged");
    w.noalias() -= lr * g;
    const double m = masked_max(w, idx);
    ++res.checks;
    if (m != 0.0) {
      res.max_abs = m;
      res.bitwise_zero = false;
      fail(ErrorCode::ZeroLeak, "masked block became non-zero (" + std::to_string(m) + ") at iteration " +
                                    std::to_string(it + 1));
    }
  }
  return res;
}

ZeroPreservationResult verify_zero_preserving_ode(const Problem& prob, const NeuronSelection& sel, const Vector& w0,
                                                  double t_end, const IntegratorConfig& cfg, double tol) {
  const std::vector<Index> idx = zero_preserving_indices(prob.model, sel);
  require(masked_max(w0, idx) == 0.0, ErrorCode::InvalidArgument, "masked block of w0 must be exactly zero");
  IntegratorConfig c = cfg;
  c.store_states = true;
  c.record_steps = true;
  const Trajectory tr = integrate_training_flow(prob, w0, t_end, c);
  ZeroPreservationResult res;
  for (const Vector& s : tr.states) {
    res.max_abs = std::max(res.max_abs, masked_max(s, idx));
    ++res.checks;
  }
  res.bitwise_zero = res.max_abs == 0.0;
  if (res.max_abs > tol)
    fail(ErrorCode::ZeroLeak, "masked block reached " + std::to_string(res.max_abs) + " under the flow");
  return res;
}

double balance_check(const Model& model, const Vector& w, int p) {
  const FeedForwardNet& net = require_ff(model);
  require(w.size() == model.num_weights(), ErrorCode::DimensionMismatch, "weight vector has the wrong length");
  const auto& blocks = model.layout().blocks;
  double worst = 0.0;
  for (int l = 1; l < net.num_layers(); ++l) {
    const auto Win = block_view(w, blocks[l - 1]);
    const auto Wout = block_view(w, blocks[l]);
    for (Index j = 0; j < net.layer_dims[l]; ++j)
      worst = std::max(worst, std::abs(Win.row(j).squaredNorm() - p * Wout.col(j).squaredNorm()));
  }
  return worst;
}

std::vector<std::vector<Index>> SparsityMask::active_neurons(const Model& model) const {
  const FeedForwardNet& net = require_ff(model);
  std::vector<std::vector<Index>> out;
  for (const LayerMask& lm : layers) {
    std::vector<Index> act;
    for (Index j = 0; j < net.layer_dims[lm.layer]; ++j) {
      const bool zr = std::binary_search(lm.zero_rows.begin(), lm.zero_rows.end(), j);
      const bool zc = std::binary_search(lm.zero_cols.begin(), lm.zero_cols.end(), j);
      if (!zr && !zc) act.push_back(j);
    }
    out.push_back(std::move(act));
  }
  return out;
}

SparsityMask extract_mask(const Model& model, const Vector& w, double rel_threshold) {
  const FeedForwardNet& net = require_ff(model);
  require(rel_threshold > 0.0 && rel_threshold < 1.0, ErrorCode::InvalidArgument, "threshold must lie in (0, 1)");
  require(w.size() == model.num_weights(), ErrorCode::DimensionMismatch, "weight vector has the wrong length");
  const auto& blocks = model.layout().blocks;
  SparsityMask mask;
  mask.threshold = rel_threshold;
  for (int l = 1; l < net.num_layers(); ++l) {
    const auto Win = block_view(w, blocks[l - 1]);
    const auto Wout = block_view(w, blocks[l]);
    const Vector rows = Win.rowwise().norm();
    const Vector cols = Wout.colwise().norm().transpose();
    require(rows.maxCoeff() > 0.0 && cols.maxCoeff() > 0.0, ErrorCode::DegenerateLayer,
            "hidden layer " + std::to_string(l) + " has all-zero weights");
    LayerMask lm;
    lm.layer = l;
    const double rcut = rel_threshold * rows.maxCoeff();
    const double ccut = rel_threshold * cols.maxCoeff();
    for (Index j = 0; j < rows.size(); ++j) {
      if (rows(j) <= rcut) lm.zero_rows.push_back(j);
      if (cols(j) <= ccut) lm.zero_cols.push_back(j);
    }
    mask.pairing_consistent &= lm.zero_rows == lm.zero_cols;
    mask.layers.push_back(std::move(lm));
  }
  return mask;
}

double masked_block_ratio(const Model& model, const Vector& w, const SparsityMask& mask) {
  const auto& blocks = model.layout().blocks;
  std::vector<Index> idx;
  for (const LayerMask& lm : mask.layers) {
    for (Index j : lm.zero_rows) append_row_indices(blocks[lm.layer - 1], j, idx);
    for (Index j : lm.zero_cols) append_col_indices(blocks[lm.layer], j, idx);
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  double acc = 0.0;
  for (Index i : idx) acc += w(i) * w(i);
  const double total = w.norm();
  return total > 0.0 ? std::sqrt(acc) / total : 0.0;
}

PreservationReport preservation_report(const Model& model, const Trajectory& traj, double t_before, double t_after,
                                       double rel_threshold) {
  require(traj.has_states(), ErrorCode::CheckpointMissing, "trajectory holds no weight states");
  const long ib = traj.find_time(t_before);
  const long ia = traj.find_time(t_after);
  if (ib < 0) fail(ErrorCode::CheckpointMissing, "no row at t = " + std::to_string(t_before));
  if (ia < 0) fail(ErrorCode::CheckpointMissing, "no row at t = " + std::to_string(t_after));
  PreservationReport rep;
  rep.t_before = traj.times[ib];
  rep.t_after = traj.times[ia];
  rep.mask_before = extract_mask(model, traj.states[ib], rel_threshold);
  rep.mask_after = extract_mask(model, traj.states[ia], rel_threshold);
  rep.equal = rep.mask_before.same_pattern(rep.mask_after);
  rep.ratio_before = masked_block_ratio(model, traj.states[ib], rep.mask_before);
  rep.ratio_after = masked_block_ratio(model, traj.states[ia], rep.mask_after);
  return rep;
}

SparsityExperiment analyze_sparsity(const Problem& prob, Trajectory traj, const SparsityExperimentOptions& opt,
                                    std::optional<double> saddle_window) {
  require_ff(prob.model);
  require(traj.has_states(), ErrorCode::CheckpointMissing, "sparsity analysis needs stored states");
  SparsityExperiment out;
  out.traj = std::move(traj);
  out.loss_at_origin = training_loss(prob, Vector::Zero(prob.model.num_weights()));
  SaddleOptions so;
  so.eps = opt.saddle_eps.value_or(1e-4 * (1.0 + out.loss_at_origin));
  if (saddle_window) so.window = *saddle_window;
  out.saddle = detect_first_saddle(out.traj, so);

  const double min_loss = *std::min_element(out.traj.loss.begin(), out.traj.loss.end());
  out.eta = opt.eta_fraction * (out.loss_at_origin - min_loss);
  std::size_t before = 0;
  for (std::size_t i = 0; i < out.saddle.row; ++i)
    if (out.traj.loss[i] >= out.loss_at_origin - out.eta) before = i;
  const bool gd = !out.traj.iterations.empty();
  out.iter_before = gd ? out.traj.iterations[before] : static_cast<long>(before);
  out.iter_after = gd ? out.traj.iterations[out.saddle.row] : static_cast<long>(out.saddle.row);
  out.report = preservation_report(prob.model, out.traj, out.traj.times[before], out.traj.times[out.saddle.row],
                                   opt.rel_threshold);
  return out;
}

SparsityExperiment sparsity_experiment(const Problem& prob, const Vector& w0, const SparsityExperimentOptions& opt) {
  require_ff(prob.model);
  const double loss0 = training_loss(prob, Vector::Zero(prob.model.num_weights()));
  const double eps = opt.saddle_eps.value_or(1e-4 * (1.0 + loss0));

  // Stop once the gradient has risen above eps, fallen back below it, and a
  // confirmation tail of 5% of the elapsed iterations has passed.
  bool left_origin = false;
  long first_small = -1;
  GdOptions g;
  g.record_every = opt.record_every;
  g.stop = [&](long it, const LossAndGrad& lg) {
    const double gn = lg.grad.norm();
    if (!left_origin) {
      left_origin = gn > eps;
      return false;
    }
    if (first_small < 0 && gn <= eps) first_small = it;
    return first_small >= 0 && it >= first_small + std::max<long>(1000, first_small / 20);
  };
  Trajectory traj = gd_train(prob, w0, opt.lr, opt.max_iters, g);
  const double tail = first_small >= 0 ? traj.times.back() - opt.lr * static_cast<double>(first_small) : 0.0;
  return analyze_sparsity(prob, std::move(traj), opt, tail > 0.0 ? std::optional<double>(tail) : std::nullopt);
}

}  // namespace homoflow
