#include "tmcl/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "tmcl/errors.hpp"
#include "tmcl/mcl.hpp"
#include "tmcl/rng.hpp"

namespace tmcl {

int CemConfig::elite_count() const {
  return static_cast<int>(std::ceil(elite_fraction * candidates - 1e-9));
}

void CemConfig::validate() const {
  if (candidates < 2 || iterations < 1 || horizon < 1 || particles < 1) {
    throw ConfigurationError("CEM needs candidates >= 2 and iterations, horizon, particles >= 1");
  }
  if (!(elite_fraction > 0.0 && elite_fraction <= 1.0)) {
    throw ConfigurationError("elite fraction must lie in (0, 1]");
  }
  if (elite_count() < 2) throw ConfigurationError("CEM needs at least 2 elites");
  if (action_low.size() == 0 || action_low.size() != action_high.size() ||
      (action_high.array() < action_low.array()).any()) {
    throw ConfigurationError("invalid CEM action bounds");
  }
  if (initial_std_fraction < 0.0 || min_std < 0.0) {
    throw ConfigurationError("CEM standard deviations must be non-negative");
  }
}

CemConfig cem_config_for(const EnvSpec& spec) {
  CemConfig c;
  c.action_low = spec.action_low;
  c.action_high = spec.action_high;
  return c;
}

std::vector<WindowedTransition> selection_window(std::span<const Transition> history, int n, int k) {
  if (n < 0) throw ConfigurationError("selection window must be non-negative");
  std::vector<WindowedTransition> out;
  const int t = static_cast<int>(history.size());
  if (history.empty()) return out;
  const int ds = static_cast<int>(history.front().state.size());
  const int da = static_cast<int>(history.front().action.size());
  for (int i = std::max(0, t - n); i <= t - 2; ++i) {
    out.push_back({history[static_cast<std::size_t>(i)], past_window(history, i, k, ds, da)});
  }
  return out;
}

Eigen::VectorXd head_window_errors(const MultiHeadDynamicsModel& model,
                                   std::span<const WindowedTransition> recent) {
  Eigen::VectorXd errors = Eigen::VectorXd::Zero(model.num_heads());
  if (recent.empty()) return errors;
  const auto n = static_cast<Eigen::Index>(recent.size());
  Eigen::MatrixXd states(model.state_dim(), n), actions(model.action_dim(), n), next(model.state_dim(), n);
  Eigen::MatrixXd windows(model.has_context() ? model.window_input_width() : 0, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = recent[static_cast<std::size_t>(i)];
    states.col(i) = r.transition.state;
    actions.col(i) = r.transition.action;
    next.col(i) = r.transition.next_state;
    if (model.has_context()) windows.col(i) = model.window_input(r.window);
  }
  const Eigen::MatrixXd g = MultiHeadDynamicsModel::head_inputs(
      model.features_batch(model.normalized_inputs(states, actions)), model.encode_batch(windows));
  for (int h = 0; h < model.num_heads(); ++h) {
    const auto out = model.heads()[static_cast<std::size_t>(h)].forward_batch(g);
    const Eigen::MatrixXd pred = states + model.normalizer().denormalize_deltas(out.mean);
    errors[h] = ((next - pred).array().square().colwise().sum() / model.state_dim()).sum();
  }
  return errors;
}

int select_head(const MultiHeadDynamicsModel& model, std::span<const WindowedTransition> recent) {
  if (recent.empty()) return 0;
  return argmin_head(head_window_errors(model, recent));
}

namespace {

// Propagates `columns` = sequences x particles of one ensemble member and adds
// each column's return to `totals` (one entry per sequence).
void rollout_member(const MultiHeadDynamicsModel& model, int head, const Eigen::VectorXd& state,
                    const PastWindow& window, std::span<const Eigen::MatrixXd> sequences,
                    const RewardFn& reward, const std::vector<Eigen::MatrixXd>& noise,
                    const RolloutSpec& spec, Eigen::VectorXd& totals) {
  const auto q = static_cast<Eigen::Index>(noise.size());
  const auto n_seq = static_cast<Eigen::Index>(sequences.size());
  const Eigen::Index n = q * n_seq;
  const int ds = model.state_dim();
  const int da = model.action_dim();
  const int horizon = static_cast<int>(sequences.front().cols());
  const Eigen::Index pair = ds + da;

  Eigen::MatrixXd s = state.replicate(1, n);
  Eigen::MatrixXd w;
  if (model.has_context()) w = model.window_input(window).replicate(1, n);
  Eigen::MatrixXd a(da, n);
  Eigen::MatrixXd eps(ds, n);
  const Eigen::ArrayXd delta_var = model.normalizer().delta_std.array().square();
  const auto& norm = model.normalizer();

  for (int t = 0; t < horizon; ++t) {
    for (Eigen::Index k = 0; k < n_seq; ++k) {
      a.middleCols(k * q, q) = sequences[static_cast<std::size_t>(k)].col(t).replicate(1, q);
    }
    for (Eigen::Index c = 0; c < n; ++c) {
      totals[c / q] += reward(std::span<const double>(s.col(c).data(), static_cast<std::size_t>(ds)),
                              std::span<const double>(a.col(c).data(), static_cast<std::size_t>(da)));
    }
    if (t + 1 == horizon) break;

    const Eigen::MatrixXd x = model.normalized_inputs(s, a);
    const Eigen::MatrixXd g =
        MultiHeadDynamicsModel::head_inputs(model.features_batch(x), model.encode_batch(w));
    Eigen::MatrixXd mean, var;
    if (spec.average_heads) {
      mean = Eigen::MatrixXd::Zero(ds, n);
      var = Eigen::MatrixXd::Zero(ds, n);
      for (const auto& h : model.heads()) {
        const auto out = h.forward_batch(g);
        mean += out.mean;
        var += out.log_variance.array().exp().matrix();
      }
      mean /= model.num_heads();
      var /= model.num_heads();
    } else {
      const auto out = model.heads()[static_cast<std::size_t>(head)].forward_batch(g);
      mean = out.mean;
      var = out.log_variance.array().exp().matrix();
    }
    const Eigen::MatrixXd std_raw = (var.array().colwise() * delta_var).sqrt().matrix();
    for (Eigen::Index k = 0; k < n_seq; ++k) {
      for (Eigen::Index p = 0; p < q; ++p) {
        eps.col(k * q + p) = noise[static_cast<std::size_t>(p)].col(t);
      }
    }
    s += norm.denormalize_deltas(mean) + std_raw.cwiseProduct(eps);
    if (model.has_context()) {
      const Eigen::Index kept = w.rows() - pair;
      if (kept > 0) w.topRows(kept) = w.bottomRows(kept).eval();
      w.bottomRows(pair) = x;
    }
  }
}

}  // namespace

Eigen::VectorXd rollout_returns(std::span<const MultiHeadDynamicsModel> ensemble,
                                const HeadSelection& selection, const Eigen::VectorXd& state,
                                const PastWindow& window, std::span<const Eigen::MatrixXd> sequences,
                                const RewardFn& reward, std::span<const std::uint64_t> particle_seeds,
                                const RolloutSpec& spec) {
  if (ensemble.empty()) throw ConfigurationError("rollout needs at least one ensemble member");
  if (particle_seeds.empty()) throw ConfigurationError("rollout needs at least one particle");
  if (sequences.empty()) return Eigen::VectorXd(0);
  if (selection.heads.size() != ensemble.size()) {
    throw ConfigurationError("head selection needs one head per ensemble member");
  }
  const int horizon = static_cast<int>(sequences.front().cols());
  const int ds = ensemble.front().state_dim();
  for (const auto& seq : sequences) {
    if (seq.cols() != horizon || seq.rows() != ensemble.front().action_dim() || horizon < 1) {
      throw ConfigurationError("action sequences must all be d_a x horizon");
    }
  }
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    if (selection.heads[m] < 0 || selection.heads[m] >= ensemble[m].num_heads()) {
      throw ConfigurationError("selected head out of range");
    }
  }

  std::vector<std::vector<Eigen::MatrixXd>> noise(ensemble.size());
  for (auto seed : particle_seeds) {
    Rng rng(seed);
    const auto member = static_cast<std::size_t>(rng.index(ensemble.size()));
    Eigen::MatrixXd eps(ds, horizon);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    noise[member].push_back(std::move(eps));
  }

  Eigen::VectorXd totals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sequences.size()));
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    if (noise[m].empty()) continue;
    rollout_member(ensemble[m], selection.heads[m], state, window, sequences, reward, noise[m], spec,
                   totals);
  }
  return totals / static_cast<double>(particle_seeds.size());
}

double rollout_return(std::span<const MultiHeadDynamicsModel> ensemble, const HeadSelection& selection,
                      const Eigen::VectorXd& state, const PastWindow& window,
                      const Eigen::MatrixXd& actions, const RewardFn& reward,
                      std::span<const std::uint64_t> particle_seeds, const RolloutSpec& spec) {
  return rollout_returns(ensemble, selection, state, window, std::span<const Eigen::MatrixXd>(&actions, 1),
                         reward, particle_seeds, spec)[0];
}

CemResult cem_plan(const SequenceScorer& scorer, const CemConfig& config, Rng& rng,
                   const std::optional<Eigen::MatrixXd>& initial_mean) {
  config.validate();
  const int da = config.action_dim();
  const int horizon = config.horizon;
  const Eigen::VectorXd range = config.action_high - config.action_low;
  Eigen::MatrixXd mean = initial_mean ? *initial_mean : Eigen::MatrixXd::Zero(da, horizon);
  if (mean.rows() != da || mean.cols() != horizon) {
    throw ConfigurationError("CEM initial mean must be d_a x horizon");
  }
  Eigen::MatrixXd stddev = (range * config.initial_std_fraction).replicate(1, horizon);
  const auto clip = [&config](Eigen::MatrixXd& m) {
    m = m.cwiseMax(config.action_low.replicate(1, m.cols())).cwiseMin(config.action_high.replicate(1, m.cols()));
  };

  CemResult result;
  const int elites = config.elite_count();
  std::vector<Eigen::MatrixXd> samples(static_cast<std::size_t>(config.candidates));
  std::vector<int> order(samples.size());
  for (int it = 0; it < config.iterations; ++it) {
    for (auto& s : samples) {
      s.resize(da, horizon);
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        s.data()[i] = mean.data()[i] + stddev.data()[i] * rng.normal();
      }
      clip(s);
    }
    Eigen::VectorXd scores = scorer(samples, it);
    if (scores.size() != config.candidates) throw ConfigurationError("scorer returned the wrong count");
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      if (std::isnan(scores[i])) scores[i] = -std::numeric_limits<double>::infinity();
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&scores](int l, int r) { return scores[l] > scores[r]; });

    Eigen::MatrixXd elite_mean = Eigen::MatrixXd::Zero(da, horizon);
    double score_sum = 0.0;
    for (int e = 0; e < elites; ++e) {
      elite_mean += samples[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])];
      score_sum += scores[order[static_cast<std::size_t>(e)]];
    }
    elite_mean /= elites;
    Eigen::MatrixXd elite_var = Eigen::MatrixXd::Zero(da, horizon);
    for (int e = 0; e < elites; ++e) {
      elite_var +=
          (samples[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])] - elite_mean).array().square().matrix();
    }
    mean = elite_mean;
    stddev = (elite_var / elites).cwiseSqrt().cwiseMax(config.min_std);
    result.elite_mean.push_back(score_sum / elites);
  }
  clip(mean);
  result.mean = mean;
  result.action = mean.col(0);
  return result;
}

MpcController::MpcController(std::span<const MultiHeadDynamicsModel> ensemble, RewardFn reward,
                             ControllerOptions options)
    : ensemble_(ensemble), reward_(std::move(reward)), options_(std::move(options)) {
  if (ensemble_.empty()) throw ConfigurationError("controller needs at least one model");
  options_.cem.validate();
  if (options_.cem.action_dim() != ensemble_.front().action_dim()) {
    throw ConfigurationError("CEM action bounds do not match the model");
  }
  if (options_.selection_window < 0) throw ConfigurationError("selection window must be non-negative");
  selection_.heads.assign(ensemble_.size(), 0);
  selection_.window = options_.selection_window;
}

void MpcController::reset() {
  previous_.reset();
  selection_.heads.assign(ensemble_.size(), 0);
}

Eigen::VectorXd MpcController::act(const Eigen::VectorXd& state, std::span<const Transition> history) {
  const auto& first = ensemble_.front();
  const int k = first.has_context() ? first.context_window() : 0;
  const int t = static_cast<int>(history.size());
  const PastWindow window = past_window(history, t, k, first.state_dim(), first.action_dim());

  const auto recent = selection_window(history, options_.selection_window, k);
  for (std::size_t m = 0; m < ensemble_.size(); ++m) {
    selection_.heads[m] = options_.non_adaptive ? 0 : select_head(ensemble_[m], recent);
  }

  std::optional<Eigen::MatrixXd> init;
  if (options_.cem.warm_start && previous_) {
    const auto h = previous_->cols();
    init = Eigen::MatrixXd::Zero(previous_->rows(), h);
    if (h > 1) init->leftCols(h - 1) = previous_->rightCols(h - 1);
  }

  const std::uint64_t call = calls_++;
  const std::uint64_t particle_base = derive_seed(options_.seed, "particles", call);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(options_.cem.particles));
  RolloutSpec spec;
  spec.average_heads = options_.non_adaptive;
  const SequenceScorer scorer = [&](std::span<const Eigen::MatrixXd> sequences, int iteration) {
    for (std::size_t p = 0; p < seeds.size(); ++p) {
      seeds[p] = derive_seed(particle_base, "iteration",
                             static_cast<std::uint64_t>(iteration) * seeds.size() + p);
    }
    return rollout_returns(ensemble_, selection_, state, window, sequences, reward_, seeds, spec);
  };
  Rng rng(derive_seed(options_.seed, "cem", call));
  auto result = cem_plan(scorer, options_.cem, rng, init);
  previous_ = result.mean;
  return result.action;
}

}  // namespace tmcl
