#pragma once

// Experiment configuration: named presets, a key=value file format and a
// single key table shared by the config file and the command line.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tmcl/envs.hpp"

namespace tmcl {

struct ExperimentConfig {
  std::string preset = "full";

  EnvFamily env = EnvFamily::Pendulum;
  /// Empty means the family's default split sets.
  std::vector<double> train_values;
  std::vector<double> test_values;
  double toy_noise_std = 0.01;

  // Model.
  int heads = 3;                 // H
  int segment_length = 10;       // M
  int selection_window = 10;     // N
  int context_window = 10;       // K
  int context_dim = 10;
  int ensemble_size = 5;         // E
  int hidden_width = 200;
  int hidden_layers = 4;
  int encoder_hidden_width = 200;
  int encoder_hidden_layers = 3;

  // Planner.
  int candidates = 200;
  int cem_iterations = 5;
  int horizon = 30;
  int particles = 20;
  double elite_fraction = 0.1;

  // Schedule.
  int iterations = 10;
  int warmup_iterations = 3;
  int trajectories_per_iteration = 10;
  int epochs = -1;  // -1: 5 for pendulum, 50 otherwise
  int batch_size = 128;
  double learning_rate = 1e-3;
  double aux_weight = 1.0;
  int eval_episodes = 10;
  /// Evaluate after every eval_interval-th iteration and after the last one.
  int eval_interval = 1;

  std::vector<std::uint64_t> seeds{0, 1, 2};

  // Ablations.
  bool multi_head_no_mcl = false;
  bool non_adaptive_planning = false;
  bool no_context = false;

  std::string output_dir = "runs/default";

  int effective_epochs() const;
  std::vector<double> effective_values(Split split) const;

  /// Throws ConfigurationError naming the offending key.
  void validate() const;
};

/// "full", "desk" or "smoke".
ExperimentConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

struct ConfigKey {
  std::string name;
  std::string help;
};
/// Every settable key, in documentation order ("preset" excluded).
const std::vector<ConfigKey>& config_keys();

/// Throws ConfigurationError for unknown keys or malformed values.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);

/// Ordered key=value pairs; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// Starts from the preset named by the overrides (CLI first, then file,
/// default "full"), then applies file values, then CLI values.
ExperimentConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& file_values,
                                const std::vector<std::pair<std::string, std::string>>& cli_values);

/// key=value text that parses back to the same config.
std::string to_config_text(const ExperimentConfig& config);
nlohmann::json to_json(const ExperimentConfig& config);

}  // namespace tmcl
