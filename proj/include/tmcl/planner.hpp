#pragma once

// CEM model-predictive control over an ensemble of multi-headed models.
//
// Before planning, each member picks the head whose mean predictions best fit
// the recent real transitions; particles then roll candidate action sequences
// through that head while their imagined history keeps the context vector
// current.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tmcl/buffer.hpp"
#include "tmcl/dynamics.hpp"
#include "tmcl/envs.hpp"

namespace tmcl {

struct CemConfig {
  int candidates = 200;
  int iterations = 5;
  int horizon = 30;
  double elite_fraction = 0.1;
  int particles = 20;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
  /// Initial std as a fraction of the action range.
  double initial_std_fraction = 0.5;
  double min_std = 1e-3;
  /// Start each step from the previous solution shifted by one step.
  bool warm_start = true;

  int action_dim() const { return static_cast<int>(action_low.size()); }
  int elite_count() const;
  /// Throws ConfigurationError.
  void validate() const;
};

/// Bounds taken from the environment family.
CemConfig cem_config_for(const EnvSpec& spec);

struct HeadSelection {
  std::vector<int> heads;  // one per ensemble member
  int window = 10;         // N
};

/// A real transition together with the K-step window that preceded it.
struct WindowedTransition {
  Transition transition;
  PastWindow window;
};

/// Transitions i = t-N .. t-2 of the episode so far (`history` holds steps 0..t-1).
std::vector<WindowedTransition> selection_window(std::span<const Transition> history, int n, int k);

/// Sum over the window of the per-transition mean squared error (raw state
/// units, averaged over dimensions) of each head's mean prediction.
Eigen::VectorXd head_window_errors(const MultiHeadDynamicsModel& model,
                                   std::span<const WindowedTransition> recent);
/// Argmin of head_window_errors; head 0 for an empty window.
int select_head(const MultiHeadDynamicsModel& model, std::span<const WindowedTransition> recent);

struct RolloutSpec {
  /// Average the heads' means and variances instead of using the selected head.
  bool average_heads = false;
};

/// Mean over sequences x particles of sum_{t<H} r(s_t, a_t), s_0 = `state`.
/// Particle p draws its member and noise from Rng(particle_seeds[p]); the same
/// seeds are reused for every sequence.
Eigen::VectorXd rollout_returns(std::span<const MultiHeadDynamicsModel> ensemble,
                                const HeadSelection& selection, const Eigen::VectorXd& state,
                                const PastWindow& window, std::span<const Eigen::MatrixXd> sequences,
                                const RewardFn& reward, std::span<const std::uint64_t> particle_seeds,
                                const RolloutSpec& spec = {});
double rollout_return(std::span<const MultiHeadDynamicsModel> ensemble, const HeadSelection& selection,
                      const Eigen::VectorXd& state, const PastWindow& window,
                      const Eigen::MatrixXd& actions, const RewardFn& reward,
                      std::span<const std::uint64_t> particle_seeds, const RolloutSpec& spec = {});

/// Scores a batch of d_a x horizon action sequences; `iteration` lets the
/// scorer pick fresh particle seeds.
using SequenceScorer =
    std::function<Eigen::VectorXd(std::span<const Eigen::MatrixXd> sequences, int iteration)>;

struct CemResult {
  Eigen::VectorXd action;          // first action of the final mean
  Eigen::MatrixXd mean;            // d_a x horizon
  std::vector<double> elite_mean;  // mean elite score per iteration
};

/// `initial_mean` defaults to zeros.
CemResult cem_plan(const SequenceScorer& scorer, const CemConfig& config, Rng& rng,
                   const std::optional<Eigen::MatrixXd>& initial_mean = std::nullopt);

struct ControllerOptions {
  CemConfig cem;
  int selection_window = 10;
  bool non_adaptive = false;
  std::uint64_t seed = 0;
};

/// Receding-horizon controller. Stateless across episodes except for the
/// warm-start buffer, which reset() clears.
class MpcController {
 public:
  MpcController(std::span<const MultiHeadDynamicsModel> ensemble, RewardFn reward,
                ControllerOptions options);

  void reset();
  /// Plans at `state`; `history` holds the real transitions of the episode so far.
  Eigen::VectorXd act(const Eigen::VectorXd& state, std::span<const Transition> history);

  const HeadSelection& last_selection() const { return selection_; }
  const ControllerOptions& options() const { return options_; }

 private:
  std::span<const MultiHeadDynamicsModel> ensemble_;
  RewardFn reward_;
  ControllerOptions options_;
  HeadSelection selection_;
  std::optional<Eigen::MatrixXd> previous_;
  std::uint64_t calls_ = 0;
};

}  // namespace tmcl
