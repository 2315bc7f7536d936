#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "tmcl/envs.hpp"
#include "tmcl/errors.hpp"
#include "tmcl/mcl.hpp"
#include "tmcl/planner.hpp"

using namespace tmcl;

namespace {

CemConfig small_cem(int da, int horizon) {
  CemConfig c;
  c.candidates = 200;
  c.iterations = 5;
  c.horizon = horizon;
  c.particles = 1;
  c.action_low = Eigen::VectorXd::Constant(da, -1.0);
  c.action_high = Eigen::VectorXd::Constant(da, 1.0);
  return c;
}

MultiHeadDynamicsModel constant_delta_model(const Eigen::VectorXd& delta, double log_variance, int da = 1) {
  const auto ds = static_cast<int>(delta.size());
  return testing::linear_model(ds, da, {Eigen::MatrixXd::Zero(ds, ds + da)}, {delta}, log_variance);
}

}  // namespace

TEST_CASE("elite count and config validation") {
  auto c = small_cem(1, 5);
  CHECK(c.elite_count() == 20);
  c.candidates = 15;
  CHECK(c.elite_count() == 2);
  c.candidates = 5;
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
  c = small_cem(1, 0);
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
  c = small_cem(1, 3);
  c.action_high = Eigen::VectorXd::Constant(1, -2.0);
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
}

TEST_CASE("selection window covers t-N to t-2") {
  const auto traj = testing::toymodes_buffer(1, 3).trajectory(0).transitions;
  const std::span<const Transition> history(traj.data(), 6);
  const auto w = selection_window(history, 3, 2);
  REQUIRE(w.size() == 2);
  CHECK(w[0].transition.step_index == 3);
  CHECK(w[1].transition.step_index == 4);
  CHECK(w[1].window.valid == 2);
  CHECK(w[1].window.states.col(1) == traj[3].state);
  CHECK(selection_window(history, 1, 0).empty());
  CHECK(selection_window(std::span<const Transition>(), 10, 0).empty());
  CHECK(selection_window(std::span<const Transition>(traj.data(), 1), 10, 0).empty());
  CHECK(selection_window(history, 100, 0).size() == 5);
}

TEST_CASE("single-head models always select head 0") {
  const auto model = constant_delta_model(Eigen::Vector2d(0.3, -0.1), 0.0, 2);
  const auto traj = testing::toymodes_buffer(1, 4).trajectory(0).transitions;
  const auto recent = selection_window(traj, 10, 0);
  CHECK(select_head(model, recent) == 0);
  CHECK(select_head(model, {}) == 0);
}

TEST_CASE("the exact head is selected") {
  const auto model = testing::toymodes_specialists({1, 0}, -9.0);
  for (int mode : {0, 1}) {
    const auto traj = testing::toymodes_buffer(1, 5, 0.0, mode).trajectory(0).transitions;
    const auto recent = selection_window(std::span<const Transition>(traj.data(), 12), 10, 0);
    const auto errors = head_window_errors(model, recent);
    CHECK(errors[1 - mode] < 1e-25);
    CHECK(errors[mode] > 1e-3);
    CHECK(select_head(model, recent) == 1 - mode);
  }
}

TEST_CASE("hand-built window errors {4.0, 1.5, 2.5} select head 1") {
  // True delta is zero; head h predicts the constant delta (c_h, c_h), so its
  // per-transition error is c_h^2. Two transitions, each contributing half.
  std::vector<Eigen::MatrixXd> w(3, Eigen::MatrixXd::Zero(2, 3));
  std::vector<Eigen::VectorXd> b;
  for (double total : {4.0, 1.5, 2.5}) b.push_back(Eigen::Vector2d::Constant(std::sqrt(total / 2)));
  const auto model = testing::linear_model(2, 1, w, b, 0.0);
  std::vector<WindowedTransition> recent;
  for (int i = 0; i < 2; ++i) {
    Transition t;
    t.state = Eigen::Vector2d(0.5 * i, -1.0);
    t.action = Eigen::VectorXd::Constant(1, 0.2);
    t.next_state = t.state;
    recent.push_back({t, PastWindow{}});
  }
  const auto errors = head_window_errors(model, recent);
  CHECK(errors[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(errors[1] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(errors[2] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(select_head(model, recent) == 1);
}

TEST_CASE("scaling head errors never changes the argmin") {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::VectorXd e(5);
    for (int i = 0; i < 5; ++i) e[i] = rng.uniform(0.0, 10.0);
    const int best = argmin_head(e);
    for (double c : {1e-100, 1e-7, 0.3, 1.0, 17.0, 1e9, 1e100}) CHECK(argmin_head(e * c) == best);
  }
}

TEST_CASE("deterministic rollout on identity dynamics returns minus the action energy") {
  const auto model = constant_delta_model(Eigen::Vector2d::Zero(), -18.0);
  std::vector<MultiHeadDynamicsModel> ensemble{model};
  Eigen::MatrixXd actions(1, 6);
  actions << 0.5, -0.25, 1.0, 0.0, 0.75, -1.0;
  const RewardFn reward = [](std::span<const double>, std::span<const double> a) { return -a[0] * a[0]; };
  const std::vector<std::uint64_t> seeds{42};
  HeadSelection sel{{0}, 10};
  const double r = rollout_return(ensemble, sel, Eigen::Vector2d(0.1, 0.2), PastWindow{}, actions, reward, seeds);
  CHECK(r == doctest::Approx(-actions.squaredNorm()).epsilon(1e-3));
}

TEST_CASE("duplicate particle seeds average to the single-particle return") {
  const auto model = constant_delta_model(Eigen::Vector2d(0.1, -0.2), std::log(0.5));
  std::vector<MultiHeadDynamicsModel> ensemble{model};
  Eigen::MatrixXd actions = Eigen::MatrixXd::Constant(1, 8, 0.3);
  const RewardFn reward = [](std::span<const double> s, std::span<const double>) { return s[0] - 2 * s[1]; };
  HeadSelection sel{{0}, 10};
  const std::vector<std::uint64_t> one{7}, two{7, 7};
  const Eigen::Vector2d s0(0.4, 0.1);
  CHECK(rollout_return(ensemble, sel, s0, PastWindow{}, actions, reward, one) ==
        doctest::Approx(rollout_return(ensemble, sel, s0, PastWindow{}, actions, reward, two)).epsilon(1e-15));
}

TEST_CASE("many-particle rollout matches the analytic expectation of a linear reward") {
  const Eigen::Vector2d b(0.1, -0.05);
  const double v = 0.04;
  const auto model = constant_delta_model(b, std::log(v));
  std::vector<MultiHeadDynamicsModel> ensemble{model};
  const Eigen::Vector2d w(1.0, -2.0);
  const RewardFn reward = [w](std::span<const double> s, std::span<const double>) { return w[0] * s[0] + w[1] * s[1]; };
  const int horizon = 10;
  const int particles = 1000;
  Eigen::MatrixXd actions = Eigen::MatrixXd::Zero(1, horizon);
  const Eigen::Vector2d s0(0.3, 0.2);
  std::vector<std::uint64_t> seeds;
  for (int p = 0; p < particles; ++p) seeds.push_back(derive_seed(5, "particle", static_cast<std::uint64_t>(p)));
  HeadSelection sel{{0}, 10};
  const double mean = rollout_return(ensemble, sel, s0, PastWindow{}, actions, reward, seeds);

  double expected = 0.0, var = 0.0;
  for (int t = 0; t < horizon; ++t) expected += w.dot(s0 + t * b);
  for (int i = 0; i < horizon - 1; ++i) var += std::pow(horizon - 1 - i, 2) * w.squaredNorm() * v;
  const double se = std::sqrt(var / particles);
  MESSAGE("rollout mean " << mean << " expected " << expected << " se " << se);
  CHECK(std::abs(mean - expected) < 3 * se);
}

TEST_CASE("rollouts validate their inputs") {
  const auto model = constant_delta_model(Eigen::Vector2d::Zero(), 0.0);
  std::vector<MultiHeadDynamicsModel> ensemble{model};
  const RewardFn reward = [](std::span<const double>, std::span<const double>) { return 0.0; };
  const std::vector<std::uint64_t> seeds{1};
  const Eigen::MatrixXd actions = Eigen::MatrixXd::Zero(1, 3);
  CHECK_THROWS_AS(rollout_return(ensemble, HeadSelection{{1}, 10}, Eigen::Vector2d::Zero(), PastWindow{}, actions,
                                 reward, seeds),
                  ConfigurationError);
  CHECK_THROWS_AS(rollout_return(ensemble, HeadSelection{{0}, 10}, Eigen::Vector2d::Zero(), PastWindow{},
                                 Eigen::MatrixXd::Zero(2, 3), reward, seeds),
                  ConfigurationError);
  CHECK_THROWS_AS(rollout_return(ensemble, HeadSelection{{0}, 10}, Eigen::Vector2d::Zero(), PastWindow{}, actions,
                                 reward, {}),
                  ConfigurationError);
}

TEST_CASE("cem finds the optimum of a one-dimensional quadratic") {
  const auto config = small_cem(1, 5);
  const SequenceScorer scorer = [](std::span<const Eigen::MatrixXd> seqs, int) {
    Eigen::VectorXd s(static_cast<Eigen::Index>(seqs.size()));
    for (std::size_t i = 0; i < seqs.size(); ++i) s[static_cast<Eigen::Index>(i)] = -std::pow(seqs[i](0, 0) - 0.3, 2);
    return s;
  };
  int hits = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(2024, "cem-trial", trial));
    const auto res = cem_plan(scorer, config, rng);
    hits += std::abs(res.action[0] - 0.3) <= 0.05;
    CHECK(res.elite_mean.size() == 5);
  }
  CHECK(hits >= 95);
}

TEST_CASE("cem with zero spread returns the initial mean") {
  auto config = small_cem(2, 4);
  config.initial_std_fraction = 0.0;
  config.min_std = 0.0;
  const Eigen::MatrixXd init = Eigen::MatrixXd::Constant(2, 4, 0.4);
  int calls = 0;
  const SequenceScorer scorer = [&calls](std::span<const Eigen::MatrixXd> seqs, int) {
    ++calls;
    Eigen::VectorXd s(static_cast<Eigen::Index>(seqs.size()));
    for (std::size_t i = 0; i < seqs.size(); ++i) s[static_cast<Eigen::Index>(i)] = seqs[i].sum();
    return s;
  };
  Rng rng(1);
  const auto res = cem_plan(scorer, config, rng, init);
  CHECK((res.action - init.col(0)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(calls == config.iterations);
}

TEST_CASE("cem with a constant objective still terminates within the bounds") {
  auto config = small_cem(2, 3);
  config.action_low << -0.5, 0.0;
  config.action_high << 0.5, 2.0;
  const SequenceScorer constant = [](std::span<const Eigen::MatrixXd> seqs, int) {
    return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(seqs.size()), 1.0);
  };
  const SequenceScorer nan = [](std::span<const Eigen::MatrixXd> seqs, int) {
    return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(seqs.size()), std::nan(""));
  };
  for (const auto* scorer : {&constant, &nan}) {
    Rng rng(3);
    const auto res = cem_plan(*scorer, config, rng);
    CHECK(res.action[0] >= -0.5);
    CHECK(res.action[0] <= 0.5);
    CHECK(res.action[1] >= 0.0);
    CHECK(res.action[1] <= 2.0);
    CHECK((res.mean.array().isFinite()).all());
  }
}

TEST_CASE("candidates are clipped to the bounds") {
  auto config = small_cem(1, 2);
  config.initial_std_fraction = 5.0;
  bool inside = true;
  const SequenceScorer scorer = [&inside](std::span<const Eigen::MatrixXd> seqs, int) {
    for (const auto& s : seqs) inside = inside && s.maxCoeff() <= 1.0 && s.minCoeff() >= -1.0;
    return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(seqs.size()));
  };
  Rng rng(4);
  cem_plan(scorer, config, rng);
  CHECK(inside);
}

namespace {

std::vector<Eigen::VectorXd> controller_trace(const std::vector<MultiHeadDynamicsModel>& ensemble, bool non_adaptive,
                                              int mode, std::uint64_t seed, int steps) {
  ControllerOptions opts;
  opts.cem = cem_config_for(env_spec(EnvFamily::ToyModes));
  opts.cem.candidates = 40;
  opts.cem.iterations = 3;
  opts.cem.horizon = 5;
  opts.cem.particles = 2;
  opts.non_adaptive = non_adaptive;
  opts.seed = seed;
  MpcController controller(ensemble, reward_function(EnvFamily::ToyModes), opts);
  EnvContext ctx(EnvFamily::ToyModes, {static_cast<double>(mode)}, Split::Test);
  auto env = make_environment(ctx);
  Rng rng(seed);
  Eigen::VectorXd obs = env->reset(rng);
  std::vector<Transition> history;
  std::vector<Eigen::VectorXd> actions;
  for (int t = 0; t < steps; ++t) {
    const auto a = controller.act(obs, history);
    CHECK((a.array() <= 1.0).all());
    CHECK((a.array() >= -1.0).all());
    const auto r = env->step(a);
    Transition tr;
    tr.state = obs;
    tr.action = a;
    tr.next_state = r.observation;
    tr.step_index = t;
    history.push_back(tr);
    obs = r.observation;
    actions.push_back(a);
  }
  return actions;
}

}  // namespace

TEST_CASE("controller is deterministic for a fixed seed") {
  const std::vector<MultiHeadDynamicsModel> ensemble{testing::toymodes_specialists({0, 1}, -9.0)};
  CHECK(controller_trace(ensemble, false, 1, 3, 8) == controller_trace(ensemble, false, 1, 3, 8));
  CHECK(controller_trace(ensemble, false, 1, 3, 8) != controller_trace(ensemble, false, 1, 4, 8));
}

TEST_CASE("head averaging changes the action trace on a specialized model") {
  const std::vector<MultiHeadDynamicsModel> ensemble{testing::toymodes_specialists({0, 1}, -9.0)};
  CHECK(controller_trace(ensemble, false, 1, 5, 6) != controller_trace(ensemble, true, 1, 5, 6));
}

TEST_CASE("adaptive selection switches to the matching head") {
  const std::vector<MultiHeadDynamicsModel> ensemble{testing::toymodes_specialists({0, 1}, -9.0)};
  ControllerOptions opts;
  opts.cem = cem_config_for(env_spec(EnvFamily::ToyModes));
  opts.cem.candidates = 20;
  opts.cem.iterations = 1;
  opts.cem.horizon = 2;
  opts.cem.particles = 1;
  MpcController controller(ensemble, reward_function(EnvFamily::ToyModes), opts);
  const auto traj = testing::toymodes_buffer(1, 9, 0.01, 1).trajectory(0).transitions;
  controller.act(traj[0].state, {});
  CHECK(controller.last_selection().heads[0] == 0);
  controller.act(traj[12].state, std::span<const Transition>(traj.data(), 12));
  CHECK(controller.last_selection().heads[0] == 1);
  controller.reset();
  CHECK(controller.last_selection().heads[0] == 0);
}

TEST_CASE("planning never reads the hidden environment parameter") {
  const std::vector<MultiHeadDynamicsModel> ensemble{testing::toymodes_specialists({0, 1}, -9.0, 2)};
  EnvContext::reset_parameter_reads();
  controller_trace(ensemble, false, 0, 1, 5);
  CHECK(EnvContext::parameter_reads() == 0);
}

TEST_CASE("controller rejects mismatched bounds") {
  const std::vector<MultiHeadDynamicsModel> ensemble{testing::toymodes_specialists()};
  ControllerOptions opts;
  opts.cem = cem_config_for(env_spec(EnvFamily::Pendulum));
  CHECK_THROWS_AS(MpcController(ensemble, reward_function(EnvFamily::ToyModes), opts), ConfigurationError);
}
