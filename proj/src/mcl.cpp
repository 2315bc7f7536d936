#include "tmcl/mcl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tmcl/errors.hpp"
#include "tmcl/rng.hpp"

namespace tmcl {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Column-major view of a set of segments.
struct SegmentBatch {
  Eigen::MatrixXd inputs;       // normalized [s; a]
  Eigen::MatrixXd reversed;     // normalized [s'; a]
  Eigen::MatrixXd windows;      // K (d_s + d_a) x n
  Eigen::MatrixXd targets;      // normalized delta
  std::vector<Eigen::Index> offsets;
  std::vector<int> trajectory_ids;
  std::vector<int> steps;

  Eigen::Index columns() const { return inputs.cols(); }
  std::size_t segments() const { return offsets.size() - 1; }
};

SegmentBatch assemble(const MultiHeadDynamicsModel& model, std::span<const TrajectorySegment> segments,
                      bool with_reversed) {
  if (segments.empty()) throw ConfigurationError("loss needs at least one segment");
  SegmentBatch b;
  b.offsets.push_back(0);
  for (const auto& seg : segments) {
    if (seg.transitions.empty()) throw ConfigurationError("empty trajectory segment");
    if (model.has_context() && seg.windows.size() != seg.transitions.size()) {
      throw ConfigurationError("segment needs one past window per transition");
    }
    b.offsets.push_back(b.offsets.back() + seg.size());
  }
  const Eigen::Index n = b.offsets.back();
  const int ds = model.state_dim();
  Eigen::MatrixXd states(ds, n), next(ds, n), actions(model.action_dim(), n);
  b.windows.resize(model.has_context() ? model.window_input_width() : 0, n);
  b.trajectory_ids.reserve(static_cast<std::size_t>(n));
  b.steps.reserve(static_cast<std::size_t>(n));
  Eigen::Index col = 0;
  for (const auto& seg : segments) {
    for (std::size_t i = 0; i < seg.transitions.size(); ++i, ++col) {
      const auto& t = seg.transitions[i];
      if (t.state.size() != ds || t.next_state.size() != ds || t.action.size() != model.action_dim()) {
        throw ConfigurationError("transition widths do not match the model");
      }
      states.col(col) = t.state;
      next.col(col) = t.next_state;
      actions.col(col) = t.action;
      if (model.has_context()) b.windows.col(col) = model.window_input(seg.windows[i]);
      b.trajectory_ids.push_back(t.trajectory_id);
      b.steps.push_back(t.step_index);
    }
  }
  b.inputs = model.normalized_inputs(states, actions);
  if (with_reversed) b.reversed = model.normalized_inputs(next, actions);
  b.targets = model.normalizer().normalize_deltas(next - states);
  return b;
}

Eigen::RowVectorXd column_nll(const nn::GaussianHead::Output& out, const Eigen::MatrixXd& targets) {
  Eigen::RowVectorXd nll(targets.cols());
  for (Eigen::Index c = 0; c < targets.cols(); ++c) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < targets.rows(); ++j) {
      const double err = targets(j, c) - out.mean(j, c);
      const double lv = out.log_variance(j, c);
      total += 0.5 * err * err * std::exp(-lv) + 0.5 * lv + kHalfLog2Pi;
    }
    nll[c] = total;
  }
  return nll;
}

// Backpropagates column-weighted NLL through `head`, touching only columns
// with non-zero weight. Returns false when no column is active.
bool head_backward(const nn::GaussianHead& head, const Eigen::MatrixXd& features,
                   const nn::GaussianHead::Output& out, const Eigen::MatrixXd& targets,
                   const Eigen::RowVectorXd& weights, std::span<double> grad,
                   Eigen::MatrixXd& features_adjoint) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index c = 0; c < weights.size(); ++c) {
    if (weights[c] != 0.0) idx.push_back(c);
  }
  if (idx.empty()) return false;
  const Eigen::MatrixXd g = features(Eigen::all, idx);
  nn::GaussianHead::Output sub{out.mean(Eigen::all, idx), out.raw(Eigen::all, idx),
                               out.log_variance(Eigen::all, idx)};
  const Eigen::MatrixXd t = targets(Eigen::all, idx);
  const Eigen::RowVectorXd w = weights(idx);
  const Eigen::ArrayXXd inv_var = (-sub.log_variance.array()).exp();
  const Eigen::ArrayXXd err = sub.mean.array() - t.array();
  const Eigen::MatrixXd mean_adj = (err * inv_var).rowwise() * w.array();
  const Eigen::MatrixXd lv_adj = (0.5 - 0.5 * err.square() * inv_var).rowwise() * w.array();
  Eigen::MatrixXd g_adj = Eigen::MatrixXd::Zero(g.rows(), g.cols());
  head.backward(g, sub, mean_adj, lv_adj, grad, g_adj);
  features_adjoint(Eigen::all, idx) += g_adj;
  return true;
}

std::span<double> block(std::span<double> grad, const ParameterLayout::Block& b) {
  return grad.subspan(b.offset, b.size);
}

}  // namespace

TrajectorySegment make_segment(const Trajectory& traj, std::span<const int> steps, int k) {
  TrajectorySegment seg;
  seg.trajectory_id = traj.id;
  seg.label = traj.label;
  if (traj.transitions.empty()) return seg;
  const auto& first = traj.transitions.front();
  const int ds = static_cast<int>(first.state.size());
  const int da = static_cast<int>(first.action.size());
  for (int s : steps) {
    if (s < 0 || s >= traj.size()) throw ConfigurationError("segment step out of range");
    seg.transitions.push_back(traj.transitions[static_cast<std::size_t>(s)]);
    seg.windows.push_back(past_window(traj.transitions, s, k, ds, da));
  }
  return seg;
}

std::vector<TrajectorySegment> sample_segments(const ReplayBuffer& buffer, int batch_size, int m,
                                               int k, Rng& rng) {
  if (batch_size < 1 || m < 1) throw ConfigurationError("batch size and M must be at least 1");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < buffer.trajectory_count(); ++i) {
    if (buffer.trajectory(i).size() >= m) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw ConfigurationError("no trajectory has at least M=" + std::to_string(m) + " transitions");
  }
  std::vector<TrajectorySegment> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::vector<int> steps;
  for (int b = 0; b < batch_size; ++b) {
    const auto& traj = buffer.trajectory(eligible[rng.index(eligible.size())]);
    steps.resize(static_cast<std::size_t>(traj.size()));
    std::iota(steps.begin(), steps.end(), 0);
    // Partial Fisher-Yates: the first m entries are a uniform draw without replacement.
    for (int i = 0; i < m; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.index(steps.size() - static_cast<std::size_t>(i));
      std::swap(steps[static_cast<std::size_t>(i)], steps[j]);
    }
    out.push_back(make_segment(traj, std::span<const int>(steps.data(), static_cast<std::size_t>(m)), k));
  }
  return out;
}

int argmin_head(const Eigen::VectorXd& values) {
  if (values.size() == 0) throw ConfigurationError("argmin over no heads");
  int best = 0;
  for (Eigen::Index h = 1; h < values.size(); ++h) {
    if (values[h] < values[best]) best = static_cast<int>(h);
  }
  return best;
}

Eigen::MatrixXd per_head_losses(const MultiHeadDynamicsModel& model,
                                std::span<const TrajectorySegment> segments) {
  return training_loss(model, segments, {}).head_losses;
}

double per_head_segment_loss(const MultiHeadDynamicsModel& model, const TrajectorySegment& segment,
                             int head) {
  if (head < 0 || head >= model.num_heads()) throw ConfigurationError("head index out of range");
  return per_head_losses(model, std::span<const TrajectorySegment>(&segment, 1))(head, 0);
}

OracleLossResult oracle_loss(const MultiHeadDynamicsModel& model,
                             std::span<const TrajectorySegment> segments) {
  auto eval = training_loss(model, segments, {});
  return {eval.primary, std::move(eval.winners), std::move(eval.head_losses)};
}

double warmup_loss(const MultiHeadDynamicsModel& model, std::span<const TrajectorySegment> segments) {
  LossOptions opts;
  opts.kind = LossKind::Warmup;
  return training_loss(model, segments, opts).primary;
}

double oracle_from_head_losses(const Eigen::MatrixXd& head_losses) {
  if (head_losses.size() == 0) throw ConfigurationError("no head losses");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < head_losses.cols(); ++j) {
    sum += head_losses(argmin_head(head_losses.col(j)), j);
  }
  return sum / static_cast<double>(head_losses.cols());
}

double warmup_from_head_losses(const Eigen::MatrixXd& head_losses) {
  if (head_losses.size() == 0) throw ConfigurationError("no head losses");
  double sum = 0.0;
  // min + mean excess keeps the value exactly equal to the oracle loss when
  // every head ties and never below it otherwise.
  for (Eigen::Index j = 0; j < head_losses.cols(); ++j) {
    const double lo = head_losses.col(j).minCoeff();
    sum += lo + (head_losses.col(j).array() - lo).sum() / static_cast<double>(head_losses.rows());
  }
  return sum / static_cast<double>(head_losses.cols());
}

DatasetAssignments::DatasetAssignments(int m, std::vector<std::vector<int>> chunk_heads)
    : m_(m), chunk_heads_(std::move(chunk_heads)) {
  if (m < 1) throw ConfigurationError("assignment chunk length must be at least 1");
}

int DatasetAssignments::head_for(int trajectory_id, int step_index) const {
  if (trajectory_id < 0 || static_cast<std::size_t>(trajectory_id) >= chunk_heads_.size() ||
      step_index < 0) {
    throw ConfigurationError("no assignment for trajectory " + std::to_string(trajectory_id));
  }
  const auto& chunks = chunk_heads_[static_cast<std::size_t>(trajectory_id)];
  const auto chunk = static_cast<std::size_t>(step_index / m_);
  if (chunk >= chunks.size()) {
    throw ConfigurationError("no assignment for step " + std::to_string(step_index) +
                             " of trajectory " + std::to_string(trajectory_id));
  }
  return chunks[chunk];
}

namespace {

// Consecutive M-chunks of every trajectory, grouped so that each call sees a
// bounded number of columns.
template <typename Fn>
void for_each_chunk_group(const ReplayBuffer& buffer, int m, int k, Fn&& fn) {
  constexpr int kColumnsPerGroup = 4096;
  std::vector<TrajectorySegment> group;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (trajectory, chunk)
  int columns = 0;
  std::vector<int> steps;
  for (std::size_t t = 0; t < buffer.trajectory_count(); ++t) {
    const auto& traj = buffer.trajectory(t);
    for (int start = 0, chunk = 0; start < traj.size(); start += m, ++chunk) {
      const int end = std::min(traj.size(), start + m);
      steps.resize(static_cast<std::size_t>(end - start));
      std::iota(steps.begin(), steps.end(), start);
      group.push_back(make_segment(traj, steps, k));
      where.emplace_back(t, static_cast<std::size_t>(chunk));
      columns += end - start;
      if (columns >= kColumnsPerGroup) {
        fn(std::span<const TrajectorySegment>(group), where);
        group.clear();
        where.clear();
        columns = 0;
      }
    }
  }
  if (!group.empty()) fn(std::span<const TrajectorySegment>(group), where);
}

}  // namespace

DatasetAssignments compute_assignments(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer,
                                       int m) {
  if (m < 1) throw ConfigurationError("M must be at least 1");
  std::vector<std::vector<int>> heads(buffer.trajectory_count());
  for (std::size_t t = 0; t < buffer.trajectory_count(); ++t) {
    heads[t].resize(static_cast<std::size_t>((buffer.trajectory(t).size() + m - 1) / m), 0);
  }
  const int k = model.has_context() ? model.context_window() : 0;
  for_each_chunk_group(buffer, m, k, [&](std::span<const TrajectorySegment> group, const auto& where) {
    const Eigen::MatrixXd losses = per_head_losses(model, group);
    for (std::size_t j = 0; j < group.size(); ++j) {
      heads[where[j].first][where[j].second] =
          argmin_head(losses.col(static_cast<Eigen::Index>(j)));
    }
  });
  return DatasetAssignments(m, std::move(heads));
}

AuxLosses aux_context_losses(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer,
                             const DatasetAssignments& assignments) {
  if (!model.has_context()) return {};
  AuxLosses sum;
  double columns = 0.0;
  for_each_chunk_group(buffer, assignments.chunk_length(), model.context_window(),
                       [&](std::span<const TrajectorySegment> group, const auto&) {
                         const auto aux = aux_context_losses(model, group, assignments);
                         double n = 0.0;
                         for (const auto& s : group) n += s.size();
                         sum.forward += aux.forward * n;
                         sum.backward += aux.backward * n;
                         columns += n;
                       });
  if (columns == 0.0) return {};
  return {sum.forward / columns, sum.backward / columns};
}

AuxLosses aux_context_losses(const MultiHeadDynamicsModel& model,
                             std::span<const TrajectorySegment> segments,
                             const DatasetAssignments& assignments) {
  LossOptions opts;
  opts.aux_weight = 1.0;
  opts.assignments = &assignments;
  return training_loss(model, segments, opts).aux;
}

LossEvaluation training_loss(const MultiHeadDynamicsModel& model,
                             std::span<const TrajectorySegment> segments, const LossOptions& options,
                             std::span<double> grad) {
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != model.parameter_count()) {
    throw ConfigurationError("gradient buffer does not match the model's parameter count");
  }
  const bool aux = model.has_context() && options.aux_weight != 0.0;
  if (aux && options.assignments == nullptr) {
    throw ConfigurationError("auxiliary losses need precomputed assignments");
  }
  const SegmentBatch batch = assemble(model, segments, aux);
  const Eigen::Index n = batch.columns();
  const auto num_segments = static_cast<Eigen::Index>(batch.segments());
  const int num_heads = model.num_heads();

  nn::ForwardCache backbone_cache, encoder_cache;
  const Eigen::MatrixXd features = model.backbone().forward_batch(batch.inputs, backbone_cache);
  Eigen::MatrixXd contexts(0, n);
  if (model.has_context()) contexts = model.encoder().forward_batch(batch.windows, encoder_cache);
  const Eigen::MatrixXd g = MultiHeadDynamicsModel::head_inputs(features, contexts);

  std::vector<nn::GaussianHead::Output> outputs;
  Eigen::MatrixXd nll(num_heads, n);
  for (int h = 0; h < num_heads; ++h) {
    outputs.push_back(model.heads()[static_cast<std::size_t>(h)].forward_batch(g));
    nll.row(h) = column_nll(outputs.back(), batch.targets);
  }

  LossEvaluation eval;
  eval.head_losses.resize(num_heads, num_segments);
  for (Eigen::Index j = 0; j < num_segments; ++j) {
    const Eigen::Index begin = batch.offsets[static_cast<std::size_t>(j)];
    const Eigen::Index len = batch.offsets[static_cast<std::size_t>(j) + 1] - begin;
    eval.head_losses.col(j) = nll.middleCols(begin, len).rowwise().sum() / static_cast<double>(len);
  }

  // d total / d nll(h, c)
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(num_heads, n);
  for (Eigen::Index j = 0; j < num_segments; ++j) {
    const Eigen::Index begin = batch.offsets[static_cast<std::size_t>(j)];
    const Eigen::Index len = batch.offsets[static_cast<std::size_t>(j) + 1] - begin;
    const int winner = argmin_head(eval.head_losses.col(j));
    eval.winners.push_back(winner);
    if (options.kind == LossKind::Oracle) {
      weights.row(winner).segment(begin, len).setConstant(
          1.0 / (static_cast<double>(num_segments) * static_cast<double>(len)));
    } else {
      weights.middleCols(begin, len).setConstant(
          1.0 / (static_cast<double>(num_segments) * num_heads * static_cast<double>(len)));
    }
  }
  eval.primary = options.kind == LossKind::Oracle ? oracle_from_head_losses(eval.head_losses)
                                                  : warmup_from_head_losses(eval.head_losses);

  Eigen::MatrixXd backward_features;
  nn::ForwardCache backward_cache;
  nn::GaussianHead::Output backward_out;
  Eigen::RowVectorXd backward_weights;
  const Eigen::MatrixXd reversed_targets = aux ? Eigen::MatrixXd(-batch.targets) : Eigen::MatrixXd();
  if (aux) {
    const double w = options.aux_weight / static_cast<double>(n);
    double fwd = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const int h = options.assignments->head_for(batch.trajectory_ids[static_cast<std::size_t>(c)],
                                                  batch.steps[static_cast<std::size_t>(c)]);
      if (h < 0 || h >= num_heads) throw ConfigurationError("assignment names a missing head");
      fwd += nll(h, c);
      weights(h, c) += w;
    }
    eval.aux.forward = fwd / static_cast<double>(n);
    const Eigen::MatrixXd bf = model.backward_net().forward_batch(batch.reversed, backward_cache);
    backward_features = MultiHeadDynamicsModel::head_inputs(bf, contexts);
    backward_out = model.backward_head().forward_batch(backward_features);
    const Eigen::RowVectorXd bnll = column_nll(backward_out, reversed_targets);
    eval.aux.backward = bnll.mean();
    backward_weights = Eigen::RowVectorXd::Constant(n, w);
  }
  eval.total = eval.primary + (aux ? options.aux_weight * eval.aux.total() : 0.0);

  if (!want_grad) return eval;
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto& layout = model.layout();
  const Eigen::Index fw = features.rows();
  const Eigen::Index cw = contexts.rows();

  Eigen::MatrixXd g_adj = Eigen::MatrixXd::Zero(g.rows(), n);
  for (int h = 0; h < num_heads; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    head_backward(model.heads()[hs], g, outputs[hs], batch.targets, weights.row(h),
                  block(grad, layout.heads[hs]), g_adj);
  }
  model.backbone().backward(backbone_cache, g_adj.topRows(fw), block(grad, layout.backbone));
  if (!model.has_context()) return eval;

  Eigen::MatrixXd z_adj = g_adj.bottomRows(cw);
  if (aux) {
    Eigen::MatrixXd b_adj = Eigen::MatrixXd::Zero(backward_features.rows(), n);
    head_backward(model.backward_head(), backward_features, backward_out, reversed_targets,
                  backward_weights, block(grad, layout.backward_head), b_adj);
    model.backward_net().backward(backward_cache, b_adj.topRows(fw), block(grad, layout.backward_net));
    z_adj += b_adj.bottomRows(cw);
  }
  model.encoder().backward(encoder_cache, z_adj, block(grad, layout.encoder));
  return eval;
}

}  // namespace tmcl
