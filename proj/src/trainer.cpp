#include "tmcl/trainer.hpp"

#include <string>

#include "tmcl/errors.hpp"
#include "tmcl/rng.hpp"

namespace tmcl {

Ensemble Ensemble::create(const ModelShape& shape, int size, std::uint64_t seed, const nn::AdamConfig& adam) {
  if (size < 1) throw ConfigurationError("ensemble needs at least one member");
  Ensemble e;
  for (int m = 0; m < size; ++m) {
    Rng rng(derive_seed(seed, "init", static_cast<std::uint64_t>(m)));
    e.members.emplace_back(shape, rng);
    e.optimizers.emplace_back(e.members.back().parameter_count(), adam);
  }
  return e;
}

Ensemble Ensemble::from_members(std::vector<MultiHeadDynamicsModel> members, const nn::AdamConfig& adam) {
  if (members.empty()) throw ConfigurationError("ensemble needs at least one member");
  Ensemble e;
  e.members = std::move(members);
  for (const auto& m : e.members) e.optimizers.emplace_back(m.parameter_count(), adam);
  return e;
}

ModelShape model_shape(const ExperimentConfig& config, const EnvSpec& spec) {
  ModelShape s;
  s.state_dim = spec.state_dim;
  s.action_dim = spec.action_dim;
  s.num_heads = config.heads;
  s.hidden_width = config.hidden_width;
  s.hidden_layers = config.hidden_layers;
  s.context_dim = config.no_context ? 0 : config.context_dim;
  s.context_window = config.context_window;
  s.encoder_hidden_width = config.encoder_hidden_width;
  s.encoder_hidden_layers = config.encoder_hidden_layers;
  return s;
}

ControllerOptions controller_options(const ExperimentConfig& config, const EnvSpec& spec) {
  ControllerOptions o;
  o.cem = cem_config_for(spec);
  o.cem.candidates = config.candidates;
  o.cem.iterations = config.cem_iterations;
  o.cem.horizon = config.horizon;
  o.cem.particles = config.particles;
  o.cem.elite_fraction = config.elite_fraction;
  o.selection_window = config.selection_window;
  o.non_adaptive = config.non_adaptive_planning;
  return o;
}

Trajectory run_episode(Environment& env, const Policy& policy, Rng& rng, double label) {
  Trajectory traj;
  traj.label = label;
  Eigen::VectorXd obs = env.reset(rng);
  const int length = env.spec().episode_length;
  traj.transitions.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    const Eigen::VectorXd action = policy(obs, traj.transitions);
    const StepResult res = env.step(action);
    Transition tr;
    tr.state = obs;
    // The environment clips; record what was actually applied.
    tr.action = action.cwiseMax(env.spec().action_low).cwiseMin(env.spec().action_high);
    tr.next_state = res.observation;
    tr.reward = res.reward;
    tr.trajectory_id = traj.id;
    tr.step_index = t;
    traj.transitions.push_back(std::move(tr));
    obs = res.observation;
  }
  return traj;
}

Policy random_policy(const EnvSpec& spec, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng, low = spec.action_low, high = spec.action_high](const Eigen::VectorXd&,
                                                               std::span<const Transition>) {
    Eigen::VectorXd a(low.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = rng->uniform(low[i], high[i]);
    return a;
  };
}

std::vector<Trajectory> collect_trajectories(EnvFamily family, Split split, std::span<const double> values,
                                             const Ensemble& ensemble, int count,
                                             const CollectionOptions& options, Rng& rng) {
  std::vector<Trajectory> out;
  if (count <= 0) return out;
  const std::span<const MultiHeadDynamicsModel> members(ensemble.members);
  for (int i = 0; i < count; ++i) {
    const EnvContext ctx = sample_context(family, values, split, rng);
    auto env = make_environment(ctx, options.env);
    ControllerOptions copts = options.controller;
    copts.seed = rng.next_u64();
    MpcController controller(members, reward_function(family), copts);
    const Policy policy = [&controller](const Eigen::VectorXd& obs, std::span<const Transition> history) {
      return controller.act(obs, history);
    };
    out.push_back(run_episode(*env, policy, rng, ctx.label()));
  }
  return out;
}

int batches_per_epoch(std::size_t transitions, int batch_size, int m) {
  const auto per_batch = static_cast<std::size_t>(batch_size) * static_cast<std::size_t>(m);
  return std::max<int>(1, static_cast<int>((transitions + per_batch - 1) / per_batch));
}

std::vector<double> train_member(MultiHeadDynamicsModel& model, nn::AdamState& adam, const ReplayBuffer& buffer,
                                 const TrainingOptions& options, std::uint64_t stream, TrainingReport& report) {
  const LossKind kind = options.warmup ? LossKind::Warmup : LossKind::Oracle;
  const int batches = batches_per_epoch(buffer.transition_count(), options.batch_size, options.segment_length);
  Rng rng(derive_seed(options.seed, "segments", stream));
  const int k = model.has_context() ? model.context_window() : 0;
  LossOptions lopts;
  lopts.kind = kind;
  lopts.aux_weight = model.has_context() ? options.aux_weight : 0.0;
  DatasetAssignments assignments;
  Eigen::VectorXd params = model.parameters();
  Eigen::VectorXd grad(params.size());
  std::vector<double> losses;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    if (lopts.aux_weight != 0.0) {
      assignments = compute_assignments(model, buffer, options.segment_length);
      lopts.assignments = &assignments;
    }
    double sum = 0.0;
    for (int b = 0; b < batches; ++b) {
      const auto segments = sample_segments(buffer, options.batch_size, options.segment_length, k, rng);
      const auto eval = training_loss(model, segments, lopts, std::span<double>(grad.data(), grad.size()));
      (kind == LossKind::Oracle ? report.oracle_calls : report.warmup_calls) += 1;
      nn::adam_step(std::span<double>(params.data(), params.size()),
                    std::span<const double>(grad.data(), grad.size()), adam);
      model.set_parameters(params);
      sum += eval.total;
    }
    losses.push_back(sum / batches);
  }
  return losses;
}

TrainingReport train_models(Ensemble& ensemble, const ReplayBuffer& buffer, const TrainingOptions& options) {
  if (buffer.empty()) throw ConfigurationError("cannot train on an empty buffer");
  if (ensemble.optimizers.size() != ensemble.members.size()) {
    throw ConfigurationError("every ensemble member needs an optimizer");
  }
  TrainingReport report;
  report.kind = options.warmup ? LossKind::Warmup : LossKind::Oracle;
  report.batches_per_epoch = batches_per_epoch(buffer.transition_count(), options.batch_size,
                                               options.segment_length);
  const Normalizer stats = Normalizer::fit(buffer);
  report.epoch_losses.resize(ensemble.size());

  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    ensemble.members[m].set_normalizer(stats);
    report.epoch_losses[m] = train_member(ensemble.members[m], ensemble.optimizers[m], buffer, options, m, report);
  }
  return report;
}

RunRecord run_outer_loop(const ExperimentConfig& config, std::uint64_t seed, const IterationCallback& on_iteration) {
  config.validate();
  const EnvSpec spec = env_spec(config.env);
  RunRecord run;
  run.seed = seed;
  nn::AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  run.ensemble = Ensemble::create(model_shape(config, spec), config.ensemble_size, seed, adam);

  CollectionOptions copts;
  copts.controller = controller_options(config, spec);
  copts.env.toy.noise_std = config.toy_noise_std;
  const auto train_values = config.effective_values(Split::Train);
  const auto test_values = config.effective_values(Split::Test);
  Rng collect_rng(derive_seed(seed, "env"));
  Rng eval_rng(derive_seed(seed, "eval"));

  for (int it = 1; it <= config.iterations; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    auto fresh = collect_trajectories(config.env, Split::Train, train_values, run.ensemble,
                                      config.trajectories_per_iteration, copts, collect_rng);
    for (auto& t : fresh) {
      rec.train_returns.push_back(t.total_reward());
      run.buffer.add(std::move(t));
    }

    TrainingOptions topts;
    topts.epochs = config.effective_epochs();
    topts.batch_size = config.batch_size;
    topts.segment_length = config.segment_length;
    topts.aux_weight = config.aux_weight;
    topts.warmup = config.multi_head_no_mcl || it <= config.warmup_iterations;
    topts.seed = derive_seed(seed, "training", static_cast<std::uint64_t>(it));
    rec.training = train_models(run.ensemble, run.buffer, topts);
    rec.loss_kind = rec.training.kind;

    for (const auto& member : run.ensemble.members) {
      rec.assignments.push_back(compute_assignment_table(member, run.buffer, config.segment_length));
    }
    if (config.eval_episodes > 0 && (it % config.eval_interval == 0 || it == config.iterations)) {
      const auto episodes = collect_trajectories(config.env, Split::Test, test_values, run.ensemble,
                                                 config.eval_episodes, copts, eval_rng);
      for (const auto& e : episodes) rec.test_returns.push_back(e.total_reward());
    }
    run.iterations.push_back(std::move(rec));
    if (on_iteration) on_iteration(run.iterations.back(), run);
  }
  return run;
}

}  // namespace tmcl
