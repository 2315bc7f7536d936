#include "tmcl/buffer.hpp"

#include <algorithm>
#include <string>

#include "tmcl/errors.hpp"

namespace tmcl {

PastWindow past_window(std::span<const Transition> transitions, int index, int k, int state_dim,
                       int action_dim) {
  if (k < 0) throw ConfigurationError("past window length must be non-negative");
  if (index < 0 || index > static_cast<int>(transitions.size())) {
    throw ConfigurationError("past window index out of range");
  }
  PastWindow w;
  w.states = Eigen::MatrixXd::Zero(state_dim, k);
  w.actions = Eigen::MatrixXd::Zero(action_dim, k);
  w.valid = std::min(k, index);
  for (int j = 0; j < w.valid; ++j) {
    const auto& t = transitions[static_cast<std::size_t>(index - w.valid + j)];
    const int col = k - w.valid + j;
    w.states.col(col) = t.state;
    w.actions.col(col) = t.action;
  }
  return w;
}

double Trajectory::total_reward() const {
  double r = 0.0;
  for (const auto& t : transitions) r += t.reward;
  return r;
}

void ReplayBuffer::add(Trajectory trajectory, bool renumber) {
  if (renumber) {
    trajectory.id = static_cast<int>(trajectories_.size());
    for (auto& t : trajectory.transitions) t.trajectory_id = trajectory.id;
  }
  for (std::size_t i = 0; i < trajectory.transitions.size(); ++i) {
    const auto& t = trajectory.transitions[i];
    if (t.step_index != static_cast<int>(i)) {
      throw ConfigurationError("trajectory " + std::to_string(trajectory.id) +
                               " is not step-contiguous at position " + std::to_string(i));
    }
    if (t.trajectory_id != trajectory.id) {
      throw ConfigurationError("transition trajectory id does not match its trajectory");
    }
    const auto& first = trajectory.transitions.front();
    if (t.state.size() != first.state.size() || t.next_state.size() != first.state.size() ||
        t.action.size() != first.action.size()) {
      throw ConfigurationError("transition widths differ within a trajectory");
    }
  }
  trajectories_.push_back(std::move(trajectory));
}

std::size_t ReplayBuffer::transition_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories_) n += t.transitions.size();
  return n;
}

}  // namespace tmcl
