#include "doctest.h"

#include "support.hpp"
#include "tmcl/buffer.hpp"
#include "tmcl/errors.hpp"

using namespace tmcl;

namespace {

Trajectory counting_trajectory(int length) {
  Trajectory t;
  for (int i = 0; i < length; ++i) {
    Transition tr;
    tr.state = Eigen::VectorXd::Constant(2, i);
    tr.action = Eigen::VectorXd::Constant(1, 100 + i);
    tr.next_state = Eigen::VectorXd::Constant(2, i + 1);
    tr.reward = 0.5 * i;
    tr.step_index = i;
    t.transitions.push_back(tr);
  }
  return t;
}

}  // namespace

TEST_CASE("past window at the episode start is empty and zero") {
  const auto t = counting_trajectory(5);
  const auto w = past_window(t.transitions, 0, 3, 2, 1);
  CHECK(w.valid == 0);
  CHECK(w.length() == 3);
  CHECK(w.states.isZero(0.0));
  CHECK(w.actions.isZero(0.0));
}

TEST_CASE("past window is right-aligned, oldest first and masked") {
  const auto t = counting_trajectory(6);
  const auto partial = past_window(t.transitions, 2, 4, 2, 1);
  CHECK(partial.valid == 2);
  CHECK(partial.states.col(0).isZero(0.0));
  CHECK(partial.states.col(1).isZero(0.0));
  CHECK(partial.states(0, 2) == 0.0);
  CHECK(partial.states(0, 3) == 1.0);
  CHECK(partial.actions(0, 2) == 100.0);
  CHECK(partial.actions(0, 3) == 101.0);

  const auto full = past_window(t.transitions, 5, 3, 2, 1);
  CHECK(full.valid == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(full.states(1, j) == 2 + j);
    CHECK(full.actions(0, j) == 102 + j);
  }
  CHECK_THROWS_AS(past_window(t.transitions, 7, 3, 2, 1), ConfigurationError);
  CHECK(past_window(t.transitions, 3, 0, 2, 1).valid == 0);
}

TEST_CASE("buffer renumbers trajectories and counts transitions") {
  ReplayBuffer buffer;
  buffer.add(counting_trajectory(4));
  buffer.add(counting_trajectory(7));
  CHECK(buffer.trajectory_count() == 2);
  CHECK(buffer.transition_count() == 11);
  CHECK(buffer.trajectory(1).id == 1);
  for (const auto& tr : buffer.trajectory(1).transitions) CHECK(tr.trajectory_id == 1);
  CHECK(buffer.trajectory(0).total_reward() == doctest::Approx(0.5 * (0 + 1 + 2 + 3)));
}

TEST_CASE("buffer rejects non-contiguous or inconsistent trajectories") {
  ReplayBuffer buffer;
  auto gap = counting_trajectory(4);
  gap.transitions[2].step_index = 5;
  CHECK_THROWS_AS(buffer.add(gap), ConfigurationError);

  auto foreign = counting_trajectory(3);
  foreign.id = 0;
  foreign.transitions[1].trajectory_id = 4;
  CHECK_THROWS_AS(buffer.add(foreign, false), ConfigurationError);

  auto ragged = counting_trajectory(3);
  ragged.transitions[2].state = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(buffer.add(ragged), ConfigurationError);
  CHECK(buffer.empty());
}

TEST_CASE("labels are carried but optional") {
  ReplayBuffer buffer;
  buffer.add(counting_trajectory(2));
  CHECK(std::isnan(buffer.trajectory(0).label));
  auto labelled = counting_trajectory(2);
  labelled.label = 1.25;
  buffer.add(labelled);
  CHECK(buffer.trajectory(1).label == 1.25);
}
