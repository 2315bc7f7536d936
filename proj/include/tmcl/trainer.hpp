#pragma once

// The outer loop: collect trajectories with the MPC controller, then train
// every ensemble member on the growing buffer (warm-up loss for the first
// iterations, oracle loss afterwards).

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tmcl/buffer.hpp"
#include "tmcl/config.hpp"
#include "tmcl/dynamics.hpp"
#include "tmcl/envs.hpp"
#include "tmcl/mcl.hpp"
#include "tmcl/metrics.hpp"
#include "tmcl/nn.hpp"
#include "tmcl/planner.hpp"

namespace tmcl {

class Rng;

/// Independent members, each with its own optimizer state.
struct Ensemble {
  std::vector<MultiHeadDynamicsModel> members;
  std::vector<nn::AdamState> optimizers;

  /// Member m is initialized from derive_seed(seed, "init", m).
  static Ensemble create(const ModelShape& shape, int size, std::uint64_t seed, const nn::AdamConfig& adam = {});
  /// Wraps trained or loaded members with fresh optimizer state.
  static Ensemble from_members(std::vector<MultiHeadDynamicsModel> members, const nn::AdamConfig& adam = {});
  std::size_t size() const { return members.size(); }
};

ModelShape model_shape(const ExperimentConfig& config, const EnvSpec& spec);
ControllerOptions controller_options(const ExperimentConfig& config, const EnvSpec& spec);

/// Chooses an action from the current observation and the episode so far.
using Policy = std::function<Eigen::VectorXd(const Eigen::VectorXd& observation,
                                             std::span<const Transition> history)>;

/// One full episode; `label` is stored on the trajectory for diagnostics.
Trajectory run_episode(Environment& env, const Policy& policy, Rng& rng, double label);

/// Uniform actions within the family's bounds.
Policy random_policy(const EnvSpec& spec, std::uint64_t seed);

struct CollectionOptions {
  ControllerOptions controller;
  EnvOptions env;
};

/// `count` MPC episodes, each in a context drawn uniformly from `values`.
std::vector<Trajectory> collect_trajectories(EnvFamily family, Split split, std::span<const double> values,
                                             const Ensemble& ensemble, int count,
                                             const CollectionOptions& options, Rng& rng);

struct TrainingOptions {
  int epochs = 50;
  int batch_size = 128;
  int segment_length = 10;
  double aux_weight = 1.0;
  bool warmup = false;
  std::uint64_t seed = 0;
};

struct TrainingReport {
  LossKind kind = LossKind::Oracle;
  int batches_per_epoch = 0;
  std::vector<std::vector<double>> epoch_losses;  // member x epoch
  /// Number of loss evaluations made with each kind; the switch test reads these.
  int oracle_calls = 0;
  int warmup_calls = 0;
};

/// max(1, ceil(transitions / (batch_size * M)))
int batches_per_epoch(std::size_t transitions, int batch_size, int m);

/// Trains one member (normalizer already set) on segment stream
/// derive_seed(options.seed, "segments", stream); returns per-epoch losses.
std::vector<double> train_member(MultiHeadDynamicsModel& model, nn::AdamState& adam, const ReplayBuffer& buffer,
                                 const TrainingOptions& options, std::uint64_t stream, TrainingReport& report);

/// Refits every member's normalizer on `buffer`, then trains each member on
/// its own segment stream derive_seed(seed, "segments", m).
TrainingReport train_models(Ensemble& ensemble, const ReplayBuffer& buffer, const TrainingOptions& options);

struct IterationRecord {
  int iteration = 0;  // 1-based
  LossKind loss_kind = LossKind::Oracle;
  TrainingReport training;
  std::vector<double> train_returns;  // episodes collected this iteration
  std::vector<double> test_returns;   // empty when not evaluated
  std::vector<AssignmentTable> assignments;  // one per member
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<IterationRecord> iterations;
  Ensemble ensemble;
  ReplayBuffer buffer;
};

using IterationCallback = std::function<void(const IterationRecord&, const RunRecord&)>;

/// Runs the configured number of iterations for one master seed. The callback
/// fires after every iteration so partial results can be persisted.
RunRecord run_outer_loop(const ExperimentConfig& config, std::uint64_t seed,
                         const IterationCallback& on_iteration = {});

}  // namespace tmcl
