// Command-line front end: run, sweep, eval, assignments, export-features.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tmcl/checkpoint.hpp"
#include "tmcl/config.hpp"
#include "tmcl/errors.hpp"
#include "tmcl/experiment.hpp"
#include "tmcl/format.hpp"

namespace fs = std::filesystem;
using namespace tmcl;

namespace {

struct ConfigFlags {
  std::string file;
  std::string preset;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_config_flags(CLI::App& app, ConfigFlags& flags) {
  app.add_option("--config", flags.file, "key=value config file");
  app.add_option("--preset", flags.preset, "full, desk or smoke");
  for (const auto& key : config_keys()) {
    std::string names = "--" + key.name;
    std::string dashed = key.name;
    for (auto& c : dashed) c = c == '_' ? '-' : c;
    if (dashed != key.name) names += ",--" + dashed;
    flags.options[key.name] = app.add_option(names, flags.values[key.name], key.help);
  }
}

ExperimentConfig resolve(const ConfigFlags& flags) {
  std::vector<std::pair<std::string, std::string>> file_values, cli_values;
  if (!flags.file.empty()) file_values = read_config_file(flags.file);
  if (!flags.preset.empty()) cli_values.emplace_back("preset", flags.preset);
  for (const auto& key : config_keys()) {
    if (flags.options.at(key.name)->count() > 0) cli_values.emplace_back(key.name, flags.values.at(key.name));
  }
  return resolve_config(file_values, cli_values);
}

int check_outputs(const std::vector<fs::path>& files) {
  int missing = 0;
  for (const auto& f : files) {
    if (!fs::exists(f)) {
      std::cerr << "missing output: " << f.string() << "\n";
      ++missing;
    }
  }
  return missing == 0 ? 0 : 1;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigurationError("--values: '" + item + "' is not an integer");
    }
  }
  return out;
}

struct CheckpointFlags {
  std::string path;
  std::string split = "train";
  int episodes = 4;
  std::uint64_t seed = 0;
  std::string policy = "random";
  std::string out;
};

void add_checkpoint_flags(CLI::App& app, CheckpointFlags& flags, const std::string& default_split,
                          int default_episodes) {
  flags.split = default_split;
  flags.episodes = default_episodes;
  app.add_option("--checkpoint", flags.path, "checkpoint written by `run`")->required();
  app.add_option("--split", flags.split, "train or test")->capture_default_str();
  app.add_option("--episodes", flags.episodes, "episodes to run")->capture_default_str();
  app.add_option("--seed", flags.seed, "episode seed")->capture_default_str();
  app.add_option("--out", flags.out, "output CSV (default: next to the checkpoint)");
}

fs::path output_path(const CheckpointFlags& flags, const std::string& stem) {
  if (!flags.out.empty()) return flags.out;
  return fs::path(flags.path).parent_path() / (stem + "_" + flags.split + ".csv");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory-wise multiple choice learning for dynamics generalization"};
  app.require_subcommand(1);

  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run", "train and evaluate for every configured seed");
  add_config_flags(*run, run_flags);

  ConfigFlags sweep_flags;
  std::string axis;
  std::string values;
  auto* sweep = app.add_subcommand("sweep", "repeat `run` over values of H, M or N");
  add_config_flags(*sweep, sweep_flags);
  sweep->add_option("--axis", axis, "H, M or N")->required();
  sweep->add_option("--values", values, "comma-separated integers")->required();

  CheckpointFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "evaluate a saved ensemble with the MPC controller");
  add_checkpoint_flags(*eval, eval_flags, "test", 10);

  CheckpointFlags assign_flags;
  auto* assign = app.add_subcommand("assignments", "assignment table of a saved ensemble");
  add_checkpoint_flags(*assign, assign_flags, "train", 4);
  assign->add_option("--policy", assign_flags.policy, "random or mpc")->capture_default_str();

  CheckpointFlags feature_flags;
  int member = 0;
  auto* features = app.add_subcommand("export-features", "hidden features of one ensemble member");
  add_checkpoint_flags(*features, feature_flags, "train", 4);
  features->add_option("--policy", feature_flags.policy, "random or mpc")->capture_default_str();
  features->add_option("--member", member, "ensemble member")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto config = resolve(run_flags);
      const auto result = run_experiment(config);
      for (const auto& s : result.runs) {
        std::cout << "seed " << s.seed << ": " << s.status << ", final test return "
                  << (s.final_test_return ? format_double(*s.final_test_return) : "n/a") << ", mean purity "
                  << format_double(s.mean_purity) << "\n";
      }
      return check_outputs(result.files);
    }
    if (sweep->parsed()) {
      const auto config = resolve(sweep_flags);
      const auto result = run_sweep(config, sweep_axis_from_string(axis), parse_int_list(values));
      std::cout << result.table.str();
      return check_outputs(result.files);
    }

    const auto load = [](const CheckpointFlags& f) {
      auto ck = load_checkpoint(f.path);
      auto config = config_from_metadata(ck.metadata);
      return std::make_pair(std::move(ck), std::move(config));
    };
    const auto policy_is_mpc = [](const std::string& p) {
      if (p != "random" && p != "mpc") throw ConfigurationError("--policy must be random or mpc");
      return p == "mpc";
    };

    if (eval->parsed()) {
      const auto [ck, config] = load(eval_flags);
      const Split split = split_from_string(eval_flags.split);
      const auto res = evaluate_generalization(ck.members, config, split, eval_flags.episodes, eval_flags.seed);
      CsvTable table({"episode", "label", "return"});
      for (std::size_t i = 0; i < res.returns.size(); ++i) {
        table.add_row({std::to_string(i), format_double(res.labels[i]), format_double(res.returns[i])});
      }
      const auto out = output_path(eval_flags, "eval");
      table.write(out);
      if (res.empty) {
        std::cout << "no episodes requested\n";
      } else {
        std::cout << "mean return " << format_double(res.stats.mean) << " +- " << format_double(res.stats.stddev)
                  << " over " << res.stats.count << " episodes\n";
      }
      return check_outputs({out});
    }
    if (assign->parsed()) {
      const auto [ck, config] = load(assign_flags);
      const auto buffer = diagnostic_buffer(ck.members, config, split_from_string(assign_flags.split),
                                            assign_flags.episodes, policy_is_mpc(assign_flags.policy),
                                            assign_flags.seed);
      CsvTable table({"member", "label", "head", "fraction"});
      for (std::size_t m = 0; m < ck.members.size(); ++m) {
        const auto t = compute_assignment_table(ck.members[m], buffer, config.segment_length);
        for (std::size_t r = 0; r < t.labels.size(); ++r) {
          for (int h = 0; h < t.heads; ++h) {
            table.add_row({std::to_string(m), format_double(t.labels[r]), std::to_string(h),
                           format_double(t.fractions[r][static_cast<std::size_t>(h)])});
          }
        }
        std::cout << "member " << m << ": mean purity " << format_double(t.mean_purity()) << "\n";
      }
      const auto out = output_path(assign_flags, "assignments");
      table.write(out);
      return check_outputs({out});
    }
    if (features->parsed()) {
      const auto [ck, config] = load(feature_flags);
      if (member < 0 || static_cast<std::size_t>(member) >= ck.members.size()) {
        throw ConfigurationError("--member out of range");
      }
      const auto buffer = diagnostic_buffer(ck.members, config, split_from_string(feature_flags.split),
                                            feature_flags.episodes, policy_is_mpc(feature_flags.policy),
                                            feature_flags.seed);
      const auto out = output_path(feature_flags, "features");
      feature_table(ck.members[static_cast<std::size_t>(member)], buffer).write(out);
      return check_outputs({out});
    }
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
