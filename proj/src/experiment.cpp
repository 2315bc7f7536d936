#include "tmcl/experiment.hpp"

#include <fstream>
#include <stdexcept>

#include "tmcl/checkpoint.hpp"
#include "tmcl/errors.hpp"
#include "tmcl/format.hpp"
#include "tmcl/rng.hpp"

namespace tmcl {

namespace fs = std::filesystem;

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string kind_name(LossKind k) { return k == LossKind::Oracle ? "oracle" : "warmup"; }

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

CollectionOptions collection_options(const ExperimentConfig& config) {
  CollectionOptions c;
  c.controller = controller_options(config, env_spec(config.env));
  c.env.toy.noise_std = config.toy_noise_std;
  return c;
}

void write_iteration_files(const fs::path& dir, const RunRecord& run) {
  CsvTable returns({"iteration", "loss_kind", "train_mean", "train_std", "test_mean", "test_std", "test_episodes"});
  CsvTable losses({"iteration", "loss_kind", "member", "epoch", "loss"});
  CsvTable assignments({"iteration", "member", "label", "head", "fraction"});
  for (const auto& it : run.iterations) {
    const auto train = sample_stats(it.train_returns);
    const auto test = sample_stats(it.test_returns);
    const bool tested = !it.test_returns.empty();
    returns.add_row({std::to_string(it.iteration), kind_name(it.loss_kind), format_double(train.mean),
                     format_double(train.stddev), tested ? format_double(test.mean) : "",
                     tested ? format_double(test.stddev) : "", std::to_string(it.test_returns.size())});
    for (std::size_t m = 0; m < it.training.epoch_losses.size(); ++m) {
      const auto& member = it.training.epoch_losses[m];
      for (std::size_t e = 0; e < member.size(); ++e) {
        losses.add_row({std::to_string(it.iteration), kind_name(it.loss_kind), std::to_string(m),
                        std::to_string(e), format_double(member[e])});
      }
    }
    for (std::size_t m = 0; m < it.assignments.size(); ++m) {
      const auto& table = it.assignments[m];
      for (std::size_t r = 0; r < table.labels.size(); ++r) {
        for (int h = 0; h < table.heads; ++h) {
          assignments.add_row({std::to_string(it.iteration), std::to_string(m), format_double(table.labels[r]),
                               std::to_string(h), format_double(table.fractions[r][static_cast<std::size_t>(h)])});
        }
      }
    }
  }
  returns.write(dir / "returns.csv");
  losses.write(dir / "losses.csv");
  assignments.write(dir / "assignments.csv");
}

nlohmann::json summary_json(const RunSummary& s) {
  return {{"seed", s.seed},
          {"status", s.status},
          {"final_train_return", opt_json(s.final_train_return)},
          {"final_test_return", opt_json(s.final_test_return)},
          {"mean_purity", s.mean_purity},
          {"final_loss", s.final_loss}};
}

// Runs one seed into `dir`, flushing the CSVs after every iteration.
RunSummary run_seed(const ExperimentConfig& config, std::uint64_t seed, const fs::path& dir,
                    RunRecord* keep) {
  fs::create_directories(dir);
  auto snapshot = to_json(config);
  snapshot["seed"] = seed;
  write_text(dir / "config.json", snapshot.dump(2) + "\n");
  RunSummary summary;
  summary.seed = seed;
  try {
    RunRecord run = run_outer_loop(config, seed, [&dir](const IterationRecord&, const RunRecord& r) {
      write_iteration_files(dir, r);
    });
    save_checkpoint(dir / "checkpoint.tmcl", run.ensemble.members, checkpoint_metadata(config, seed));
    summary = summarize(run);
    if (keep) *keep = std::move(run);
  } catch (const std::exception& e) {
    summary.status = std::string("failed: ") + e.what();
    write_text(dir / "summary.json", summary_json(summary).dump(2) + "\n");
    throw;
  }
  write_text(dir / "summary.json", summary_json(summary).dump(2) + "\n");
  return summary;
}

}  // namespace

GeneralizationResult evaluate_generalization(std::span<const MultiHeadDynamicsModel> members,
                                             const ExperimentConfig& config, Split split, int episodes,
                                             std::uint64_t seed) {
  GeneralizationResult r;
  if (episodes <= 0) return r;
  r.empty = false;
  const auto values = config.effective_values(split);
  const auto ensemble = Ensemble::from_members({members.begin(), members.end()});
  Rng rng(seed);
  for (const auto& t : collect_trajectories(config.env, split, values, ensemble, episodes,
                                            collection_options(config), rng)) {
    r.returns.push_back(t.total_reward());
    r.labels.push_back(t.label);
  }
  r.stats = sample_stats(r.returns);
  return r;
}

GeneralizationResult evaluate_random_policy(const ExperimentConfig& config, Split split, int episodes,
                                            std::uint64_t seed) {
  GeneralizationResult r;
  if (episodes <= 0) return r;
  r.empty = false;
  const auto values = config.effective_values(split);
  const auto options = collection_options(config);
  const EnvSpec spec = env_spec(config.env);
  Rng rng(seed);
  for (int i = 0; i < episodes; ++i) {
    const EnvContext ctx = sample_context(config.env, values, split, rng);
    auto env = make_environment(ctx, options.env);
    const Policy policy = random_policy(spec, rng.next_u64());
    const auto t = run_episode(*env, policy, rng, ctx.label());
    r.returns.push_back(t.total_reward());
    r.labels.push_back(t.label);
  }
  r.stats = sample_stats(r.returns);
  return r;
}

RunSummary summarize(const RunRecord& run) {
  RunSummary s;
  s.seed = run.seed;
  if (run.iterations.empty()) return s;
  const auto& last = run.iterations.back();
  if (!last.train_returns.empty()) s.final_train_return = sample_stats(last.train_returns).mean;
  for (auto it = run.iterations.rbegin(); it != run.iterations.rend(); ++it) {
    if (!it->test_returns.empty()) {
      s.final_test_return = sample_stats(it->test_returns).mean;
      break;
    }
  }
  double purity = 0.0;
  for (const auto& t : last.assignments) purity += t.mean_purity();
  if (!last.assignments.empty()) s.mean_purity = purity / static_cast<double>(last.assignments.size());
  double loss = 0.0;
  int members = 0;
  for (const auto& m : last.training.epoch_losses) {
    if (m.empty()) continue;
    loss += m.back();
    ++members;
  }
  if (members > 0) s.final_loss = loss / members;
  for (const auto& it : run.iterations) {
    s.train_curve.push_back(sample_stats(it.train_returns).mean);
    s.test_curve.push_back(it.test_returns.empty() ? std::nullopt
                                                   : std::optional<double>(sample_stats(it.test_returns).mean));
  }
  return s;
}

std::vector<std::string> run_output_files() {
  return {"config.json", "returns.csv", "losses.csv", "assignments.csv", "checkpoint.tmcl", "summary.json"};
}

ExperimentResult run_experiment(const ExperimentConfig& config, bool keep_records) {
  config.validate();
  ExperimentResult result;
  const fs::path root(config.output_dir);
  fs::create_directories(root);
  const bool single = config.seeds.size() == 1;
  for (auto seed : config.seeds) {
    const fs::path dir = single ? root : root / ("seed_" + std::to_string(seed));
    RunRecord record;
    result.runs.push_back(run_seed(config, seed, dir, keep_records ? &record : nullptr));
    if (keep_records) result.records.push_back(std::move(record));
    for (const auto& f : run_output_files()) result.files.push_back(dir / f);
  }
  if (!single) {
    CsvTable agg({"iteration", "seeds", "train_mean", "train_std", "test_mean", "test_std"});
    for (std::size_t it = 0; it < static_cast<std::size_t>(config.iterations); ++it) {
      std::vector<double> train, test;
      for (const auto& run : result.runs) {
        train.push_back(run.train_curve.at(it));
        if (run.test_curve.at(it)) test.push_back(*run.test_curve[it]);
      }
      const auto tr = sample_stats(train);
      const auto te = sample_stats(test);
      agg.add_row({std::to_string(it + 1), std::to_string(config.seeds.size()), format_double(tr.mean),
                   format_double(tr.stddev), test.empty() ? "" : format_double(te.mean),
                   test.empty() ? "" : format_double(te.stddev)});
    }
    agg.write(root / "aggregate.csv");
    result.files.push_back(root / "aggregate.csv");
  }
  return result;
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "H") return SweepAxis::H;
  if (s == "M") return SweepAxis::M;
  if (s == "N") return SweepAxis::N;
  throw ConfigurationError("sweep axis must be H, M or N, got '" + s + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::H: return "H";
    case SweepAxis::M: return "M";
    case SweepAxis::N: return "N";
  }
  return "?";
}

ExperimentConfig with_axis_value(ExperimentConfig config, SweepAxis axis, int value) {
  switch (axis) {
    case SweepAxis::H: config.heads = value; break;
    case SweepAxis::M: config.segment_length = value; break;
    case SweepAxis::N: config.selection_window = value; break;
  }
  return config;
}

SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<int>& values) {
  if (values.empty()) throw ConfigurationError("sweep needs at least one value");
  base.validate();
  SweepResult result;
  const fs::path root(base.output_dir);
  fs::create_directories(root);
  for (int v : values) {
    auto cell = with_axis_value(base, axis, v);
    cell.output_dir = (root / (to_string(axis) + "_" + std::to_string(v))).string();
    std::vector<RunSummary> runs;
    std::string failure;
    try {
      cell.validate();
      auto res = run_experiment(cell);
      runs = std::move(res.runs);
      result.files.insert(result.files.end(), res.files.begin(), res.files.end());
    } catch (const std::exception& e) {
      failure = std::string("failed: ") + e.what();
    }
    for (std::size_t i = 0; i < cell.seeds.size(); ++i) {
      const auto seed = std::to_string(cell.seeds[i]);
      if (i < runs.size()) {
        const auto& s = runs[i];
        result.table.add_row({to_string(axis), std::to_string(v), seed, s.status, opt(s.final_test_return),
                              opt(s.final_train_return), format_double(s.mean_purity),
                              format_double(s.final_loss)});
      } else {
        result.table.add_row({to_string(axis), std::to_string(v), seed, failure, "", "", "", ""});
      }
    }
  }
  result.table.write(root / "sweep.csv");
  result.files.push_back(root / "sweep.csv");
  return result;
}

CsvTable feature_table(const MultiHeadDynamicsModel& model, const ReplayBuffer& buffer) {
  std::vector<std::string> header{"label", "trajectory", "step"};
  const int width = model.feature_width() + model.context_dim();
  for (int i = 0; i < model.feature_width(); ++i) header.push_back("b" + std::to_string(i));
  for (int i = 0; i < model.context_dim(); ++i) header.push_back("z" + std::to_string(i));
  CsvTable table(std::move(header));
  const int k = model.has_context() ? model.context_window() : 0;
  for (const auto& traj : buffer.trajectories()) {
    std::vector<PastWindow> windows;
    for (int i = 0; i < traj.size(); ++i) {
      windows.push_back(past_window(traj.transitions, i, k, model.state_dim(), model.action_dim()));
    }
    const Eigen::MatrixXd f = hidden_features(model, traj.transitions, windows);
    for (int i = 0; i < traj.size(); ++i) {
      std::vector<std::string> row{format_double(traj.label), std::to_string(traj.id), std::to_string(i)};
      for (int j = 0; j < width; ++j) row.push_back(format_double(f(j, i)));
      table.add_row(std::move(row));
    }
  }
  return table;
}

ReplayBuffer diagnostic_buffer(std::span<const MultiHeadDynamicsModel> members, const ExperimentConfig& config,
                               Split split, int episodes, bool use_planner, std::uint64_t seed) {
  ReplayBuffer buffer;
  if (episodes <= 0) return buffer;
  const auto values = config.effective_values(split);
  Rng rng(seed);
  if (use_planner) {
    const auto ensemble = Ensemble::from_members({members.begin(), members.end()});
    for (auto& t : collect_trajectories(config.env, split, values, ensemble, episodes,
                                        collection_options(config), rng)) {
      buffer.add(std::move(t));
    }
    return buffer;
  }
  const EnvSpec spec = env_spec(config.env);
  const auto options = collection_options(config);
  for (int i = 0; i < episodes; ++i) {
    const EnvContext ctx = sample_context(config.env, values, split, rng);
    auto env = make_environment(ctx, options.env);
    const Policy policy = random_policy(spec, rng.next_u64());
    buffer.add(run_episode(*env, policy, rng, ctx.label()));
  }
  return buffer;
}

nlohmann::json checkpoint_metadata(const ExperimentConfig& config, std::uint64_t seed) {
  return {{"env", to_string(config.env)}, {"seed", seed}, {"config", to_config_text(config)}};
}

ExperimentConfig config_from_metadata(const nlohmann::json& metadata) {
  if (!metadata.contains("config")) throw ConfigurationError("checkpoint carries no experiment config");
  return resolve_config({}, parse_config_text(metadata.at("config").get<std::string>()));
}

}  // namespace tmcl
