#pragma once

// Trajectory segments and the training objectives of the multi-headed model:
// the trajectory-wise oracle loss (M = 1 gives plain MCL), the warm-up loss
// that trains every head on every segment, and the auxiliary forward and
// backward prediction losses that shape the context encoder.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "tmcl/buffer.hpp"
#include "tmcl/dynamics.hpp"

namespace tmcl {

class Rng;

/// M transitions of one trajectory, each with the K-step window preceding it.
struct TrajectorySegment {
  std::vector<Transition> transitions;
  std::vector<PastWindow> windows;
  int trajectory_id = 0;
  /// Diagnostic only; no loss reads it.
  double label = 0.0;

  int size() const { return static_cast<int>(transitions.size()); }
};

/// Segment of the given positions of trajectory `traj`.
TrajectorySegment make_segment(const Trajectory& traj, std::span<const int> steps, int k);

/// B segments. Each picks a trajectory with at least M transitions uniformly,
/// then M distinct steps of it uniformly. Throws ConfigurationError if no
/// trajectory is long enough.
std::vector<TrajectorySegment> sample_segments(const ReplayBuffer& buffer, int batch_size, int m,
                                               int k, Rng& rng);

/// Lowest index among the minima.
int argmin_head(const Eigen::VectorXd& values);

/// L_j^h for every head (rows) and segment (columns).
Eigen::MatrixXd per_head_losses(const MultiHeadDynamicsModel& model,
                                std::span<const TrajectorySegment> segments);
double per_head_segment_loss(const MultiHeadDynamicsModel& model, const TrajectorySegment& segment,
                             int head);

struct OracleLossResult {
  double loss = 0.0;
  std::vector<int> assignments;  // winning head per segment
  Eigen::MatrixXd head_losses;   // H x B
};

OracleLossResult oracle_loss(const MultiHeadDynamicsModel& model,
                             std::span<const TrajectorySegment> segments);
double warmup_loss(const MultiHeadDynamicsModel& model, std::span<const TrajectorySegment> segments);

/// Mean over segments of the column minimum.
double oracle_from_head_losses(const Eigen::MatrixXd& head_losses);
/// Mean over every entry.
double warmup_from_head_losses(const Eigen::MatrixXd& head_losses);

/// Winning head of every consecutive M-chunk of every buffer trajectory.
class DatasetAssignments {
 public:
  DatasetAssignments() = default;
  DatasetAssignments(int m, std::vector<std::vector<int>> chunk_heads);

  int chunk_length() const { return m_; }
  const std::vector<std::vector<int>>& chunk_heads() const { return chunk_heads_; }
  /// Throws ConfigurationError when the transition has no assignment.
  int head_for(int trajectory_id, int step_index) const;

  bool operator==(const DatasetAssignments&) const = default;

 private:
  int m_ = 1;
  std::vector<std::vector<int>> chunk_heads_;
};

/// Read-only full-buffer pass. The last chunk of a trajectory may be shorter than M.
DatasetAssignments compute_assignments(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer,
                                       int m);

struct AuxLosses {
  double forward = 0.0;   // NLL of the assigned head
  double backward = 0.0;  // NLL of the backward predictor on the reversed delta
  double total() const { return forward + backward; }
};

/// Auxiliary losses averaged over every transition of the buffer.
AuxLosses aux_context_losses(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer,
                             const DatasetAssignments& assignments);
AuxLosses aux_context_losses(const MultiHeadDynamicsModel& model,
                             std::span<const TrajectorySegment> segments,
                             const DatasetAssignments& assignments);

enum class LossKind { Oracle, Warmup };

struct LossOptions {
  LossKind kind = LossKind::Oracle;
  /// Weight of the auxiliary losses; ignored without a context encoder.
  double aux_weight = 0.0;
  /// Required when aux_weight > 0 and the model has a context encoder.
  const DatasetAssignments* assignments = nullptr;
};

struct LossEvaluation {
  double total = 0.0;
  double primary = 0.0;  // oracle or warm-up term
  AuxLosses aux;
  std::vector<int> winners;
  Eigen::MatrixXd head_losses;
};

/// primary + aux_weight * (forward + backward). When `grad` is non-empty it
/// must have model.parameter_count() entries and receives d total / d params
/// (overwritten, flat layout of the model).
LossEvaluation training_loss(const MultiHeadDynamicsModel& model,
                             std::span<const TrajectorySegment> segments, const LossOptions& options,
                             std::span<double> grad = {});

}  // namespace tmcl
