#pragma once

// Experiment harness: persisted runs, multi-seed aggregation, sweeps,
// evaluation of saved ensembles and feature export.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tmcl/config.hpp"
#include "tmcl/metrics.hpp"
#include "tmcl/trainer.hpp"

namespace tmcl {

/// Per-episode returns; `empty` marks a request for zero episodes.
struct GeneralizationResult {
  std::vector<double> returns;
  std::vector<double> labels;
  SampleStats stats;
  bool empty = true;
};

/// Full adaptive-planning episodes in contexts drawn from `values`.
GeneralizationResult evaluate_generalization(std::span<const MultiHeadDynamicsModel> members,
                                             const ExperimentConfig& config, Split split, int episodes,
                                             std::uint64_t seed);
/// Same contexts and initial-state stream as evaluate_generalization, uniform random actions.
GeneralizationResult evaluate_random_policy(const ExperimentConfig& config, Split split, int episodes,
                                            std::uint64_t seed);

/// Metrics of one finished seed.
struct RunSummary {
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::optional<double> final_train_return;
  std::optional<double> final_test_return;
  double mean_purity = 0.0;
  double final_loss = 0.0;
  /// Per-iteration mean returns.
  std::vector<double> train_curve;
  std::vector<std::optional<double>> test_curve;
};
RunSummary summarize(const RunRecord& run);

struct ExperimentResult {
  std::vector<RunSummary> runs;
  std::vector<RunRecord> records;
  std::vector<std::filesystem::path> files;  // every file the run declared
};

/// Files written in every run directory.
std::vector<std::string> run_output_files();

/// Runs every configured seed. One seed writes straight into output_dir;
/// several seeds write seed_<s>/ subdirectories and aggregate.csv.
ExperimentResult run_experiment(const ExperimentConfig& config, bool keep_records = false);

enum class SweepAxis { H, M, N };
SweepAxis sweep_axis_from_string(const std::string& s);
std::string to_string(SweepAxis axis);
ExperimentConfig with_axis_value(ExperimentConfig config, SweepAxis axis, int value);

struct SweepResult {
  CsvTable table{{"axis", "value", "seed", "status", "final_test_return", "final_train_return",
                  "mean_purity", "final_loss"}};
  std::vector<std::filesystem::path> files;
};

/// One row per (value, seed). A failing cell is recorded and the sweep continues.
SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<int>& values);

/// Rows of label, trajectory, step, then the feature columns (backbone output
/// followed by z) of member 0.
CsvTable feature_table(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer);

/// Labeled episodes for diagnostics on a frozen ensemble: random actions, or
/// the MPC controller when `use_planner` is set.
ReplayBuffer diagnostic_buffer(std::span<const MultiHeadDynamicsModel> members, const ExperimentConfig& config,
                               Split split, int episodes, bool use_planner, std::uint64_t seed);

nlohmann::json checkpoint_metadata(const ExperimentConfig& config, std::uint64_t seed);
/// Config stored with a checkpoint by run_experiment.
ExperimentConfig config_from_metadata(const nlohmann::json& metadata);

}  // namespace tmcl
