#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace tmcl {

/// One environment step.
struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  Eigen::VectorXd next_state;
  double reward = 0.0;
  int trajectory_id = 0;
  int step_index = 0;
};

/// The K (state, action) pairs preceding a step, oldest first and
/// right-aligned: column K-1 is the most recent pair. Slots before the
/// episode start are zero and excluded by `valid`.
struct PastWindow {
  Eigen::MatrixXd states;   // d_s x K
  Eigen::MatrixXd actions;  // d_a x K
  int valid = 0;

  int length() const { return static_cast<int>(states.cols()); }
};

/// Window of the K pairs preceding `index` within one trajectory's transitions.
PastWindow past_window(std::span<const Transition> transitions, int index, int k, int state_dim,
                       int action_dim);

struct Trajectory {
  int id = 0;
  /// Diagnostic environment-parameter label (NaN when unknown). Never feeds a loss.
  double label = std::numeric_limits<double>::quiet_NaN();
  std::vector<Transition> transitions;

  double total_reward() const;
  int size() const { return static_cast<int>(transitions.size()); }
};

/// Unbounded store of complete trajectories.
class ReplayBuffer {
 public:
  /// Throws ConfigurationError unless step indices are 0..n-1 and every
  /// transition carries the trajectory's id. The id is reassigned to the
  /// buffer position when `renumber` is true.
  void add(Trajectory trajectory, bool renumber = true);

  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const Trajectory& trajectory(std::size_t i) const { return trajectories_.at(i); }
  std::size_t trajectory_count() const { return trajectories_.size(); }
  std::size_t transition_count() const;
  bool empty() const { return trajectories_.empty(); }

 private:
  std::vector<Trajectory> trajectories_;
};

}  // namespace tmcl
