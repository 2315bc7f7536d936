#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "tmcl/dynamics.hpp"
#include "tmcl/errors.hpp"

using namespace tmcl;
using tmcl::testing::random_model;
using tmcl::testing::tiny_shape;

namespace {

PastWindow window_of(const MultiHeadDynamicsModel& model, int valid, Rng& rng) {
  PastWindow w;
  w.states = Eigen::MatrixXd::Zero(model.state_dim(), model.context_window());
  w.actions = Eigen::MatrixXd::Zero(model.action_dim(), model.context_window());
  w.valid = valid;
  for (int j = model.context_window() - valid; j < model.context_window(); ++j) {
    for (int i = 0; i < model.state_dim(); ++i) w.states(i, j) = rng.normal();
    for (int i = 0; i < model.action_dim(); ++i) w.actions(i, j) = rng.normal();
  }
  return w;
}

Transition transition(const Eigen::VectorXd& s, const Eigen::VectorXd& a, const Eigen::VectorXd& next) {
  Transition t;
  t.state = s;
  t.action = a;
  t.next_state = next;
  return t;
}

}  // namespace

TEST_CASE("windows at the episode start all encode to g(0)") {
  Rng rng(1);
  const auto model = random_model(tiny_shape(2, 3), rng);
  PastWindow empty = window_of(model, 0, rng);
  PastWindow junk = empty;
  // Garbage in masked slots must be ignored.
  junk.states.setConstant(42.0);
  junk.actions.setConstant(-3.0);
  const Eigen::VectorXd z0 = encode_context(model, empty);
  const Eigen::VectorXd z1 = encode_context(model, junk);
  CHECK(z0 == z1);
  const Eigen::VectorXd expected = model.encoder().forward(Eigen::VectorXd::Zero(model.window_input_width()));
  CHECK(z0 == expected);
  CHECK(z0.size() == 3);
}

TEST_CASE("identical windows give identical z and an action perturbation changes z") {
  Rng rng(2);
  const auto model = random_model(tiny_shape(2, 3), rng);
  const auto w = window_of(model, 3, rng);
  CHECK(encode_context(model, w) == encode_context(model, w));
  auto changed = w;
  changed.actions(0, 1) += 0.5;
  CHECK((encode_context(model, w) - encode_context(model, changed)).norm() > 1e-6);
}

TEST_CASE("prediction counts and head indices") {
  Rng rng(3);
  const auto one = random_model(tiny_shape(1, 0), rng);
  const Eigen::Vector2d s(0.3, -0.2);
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 0.4);
  const auto p1 = predict_all_heads(one, s, a, Eigen::VectorXd(0));
  REQUIRE(p1.size() == 1);
  CHECK(p1[0].head_index == 0);
  CHECK((p1[0].variance.array() > 0).all());

  const auto three = random_model(tiny_shape(3, 2), rng);
  const auto z = Eigen::VectorXd::Constant(2, 0.1);
  const auto p3 = predict_all_heads(three, s, a, z);
  REQUIRE(p3.size() == 3);
  for (int h = 0; h < 3; ++h) CHECK(p3[static_cast<std::size_t>(h)].head_index == h);
  CHECK((p3[0].mean - p3[1].mean).norm() > 1e-8);
  CHECK((p3[0].mean - p3[2].mean).norm() > 1e-8);
  CHECK((p3[1].mean - p3[2].mean).norm() > 1e-8);
  CHECK_THROWS_AS(predict_all_heads(three, s, a, Eigen::VectorXd(0)), ConfigurationError);
}

TEST_CASE("zero heads predict identity dynamics") {
  Rng rng(4);
  auto model = random_model(tiny_shape(3, 2), rng);
  for (auto& h : model.mutable_heads()) {
    h.mutable_mean_layer().weight.setZero();
    h.mutable_mean_layer().bias.setZero();
  }
  const Eigen::Vector2d s(1.5, -0.7);
  for (const auto& p : predict_all_heads(model, s, Eigen::VectorXd::Constant(1, 0.2), Eigen::VectorXd::Zero(2))) {
    CHECK(p.mean == s);
  }
}

TEST_CASE("head nll examples") {
  // d_s = 1, head predicts the exact delta with unit variance.
  const Eigen::MatrixXd w = (Eigen::MatrixXd(1, 2) << 0.5, 0.0).finished();
  const auto model = testing::linear_model(1, 1, {w}, {Eigen::VectorXd::Zero(1)}, 0.0);
  const auto t = transition(Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 0.3),
                            Eigen::VectorXd::Constant(1, 3.0));
  const Eigen::VectorXd none(0);
  CHECK(head_nll(model, 0, t, none) == doctest::Approx(0.9189385332046727).epsilon(1e-12));
  CHECK(head_nll(model, 0, t, none) == head_nll(model, 0, t, none));

  double previous = head_nll(model, 0, t, none);
  for (double shift : {0.01, 0.1, 0.5, 2.0}) {
    const Eigen::MatrixXd ws = (Eigen::MatrixXd(1, 2) << 0.5, 0.0).finished();
    const auto shifted = testing::linear_model(1, 1, {ws}, {Eigen::VectorXd::Constant(1, shift)}, 0.0);
    const double nll = head_nll(shifted, 0, t, none);
    CHECK(nll > previous);
    previous = nll;
  }
  CHECK_THROWS_AS(head_nll(model, 1, t, none), ConfigurationError);
}

TEST_CASE("delta normalization round-trips") {
  Rng rng(6);
  const auto buffer = testing::random_buffer(4, 20, 3, 2, rng);
  const auto n = Normalizer::fit(buffer);
  Eigen::MatrixXd d = Eigen::MatrixXd::Random(3, 10) * 5.0;
  CHECK((n.denormalize_deltas(n.normalize_deltas(d)) - d).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("normalizer statistics and the std floor") {
  ReplayBuffer buffer;
  Trajectory t;
  for (int i = 0; i < 4; ++i) {
    Transition tr;
    tr.state = Eigen::Vector2d(i, 7.0);
    tr.action = Eigen::VectorXd::Constant(1, 0.0);
    tr.next_state = Eigen::Vector2d(i + 2, 7.0);
    tr.step_index = i;
    t.transitions.push_back(tr);
  }
  buffer.add(t);
  const auto n = Normalizer::fit(buffer);
  CHECK(n.state_mean[0] == doctest::Approx(1.5));
  CHECK(n.state_std[0] == doctest::Approx(std::sqrt(1.25)));
  CHECK(n.state_std[1] == Normalizer::kStdFloor);
  CHECK(n.action_std[0] == Normalizer::kStdFloor);
  CHECK(n.delta_mean[0] == doctest::Approx(2.0));
  CHECK(n.delta_std[0] == Normalizer::kStdFloor);
  CHECK_THROWS_AS(Normalizer::fit(ReplayBuffer{}), ConfigurationError);

  Rng rng(0);
  auto model = random_model(tiny_shape(1, 0), rng);
  model.set_normalizer(n);
  auto bad = n;
  bad.state_std[0] = 0.0;
  CHECK_THROWS_AS(model.set_normalizer(bad), ConfigurationError);
  CHECK_THROWS_AS(model.set_normalizer(Normalizer::identity(3, 1)), ConfigurationError);
}

TEST_CASE("mismatched components are configuration errors") {
  ModelComponents parts;
  Rng rng(7);
  parts.backbone = nn::DenseNet::make({3, 4}, nn::Activation::Swish, nn::Activation::Swish, rng);
  parts.normalizer = Normalizer::identity(2, 1);
  parts.heads.push_back(nn::GaussianHead::make(5, 2, rng));
  const auto build = [](const ModelComponents& p) { return MultiHeadDynamicsModel(p); };
  const auto make = [&rng](const ModelShape& s) { return MultiHeadDynamicsModel(s, rng); };
  CHECK_THROWS_AS(build(parts), ConfigurationError);
  parts.heads = {nn::GaussianHead::make(4, 2, rng)};
  CHECK_NOTHROW(build(parts));
  parts.heads.clear();
  CHECK_THROWS_AS(build(parts), ConfigurationError);

  ModelShape shape = tiny_shape(0, 0);
  CHECK_THROWS_AS(make(shape), ConfigurationError);
  shape = tiny_shape(2, 3);
  shape.context_window = 0;
  CHECK_THROWS_AS(make(shape), ConfigurationError);
}

TEST_CASE("flat parameters round-trip and follow the block layout") {
  Rng rng(8);
  auto model = random_model(tiny_shape(3, 2), rng);
  const auto& layout = model.layout();
  CHECK(layout.backbone.offset == 0);
  CHECK(layout.heads.size() == 3);
  CHECK(layout.heads[0].offset == layout.backbone.size);
  CHECK(layout.encoder.offset == layout.heads[2].offset + layout.heads[2].size);
  CHECK(layout.backward_net.offset == layout.encoder.offset + layout.encoder.size);
  CHECK(layout.total == layout.backward_head.offset + layout.backward_head.size);
  CHECK(layout.encoder.size == model.encoder().parameter_count());
  const Eigen::VectorXd p = model.parameters();
  CHECK(static_cast<std::size_t>(p.size()) == model.parameter_count());
  Eigen::VectorXd q = p;
  q[static_cast<Eigen::Index>(layout.heads[1].offset)] += 1.0;
  model.set_parameters(q);
  CHECK(model.parameters() == q);
  CHECK_THROWS_AS(model.set_parameters(Eigen::VectorXd::Zero(3)), ConfigurationError);

  const auto plain = random_model(tiny_shape(2, 0), rng);
  CHECK(plain.layout().encoder.size == 0);
  CHECK(plain.layout().backward_head.size == 0);
  CHECK_FALSE(plain.has_context());
}

TEST_CASE("hidden features concatenate backbone output and z") {
  Rng rng(9);
  const auto model = random_model(tiny_shape(2, 3), rng);
  const auto buffer = testing::random_buffer(1, 6, 2, 1, rng);
  const auto& tr = buffer.trajectory(0).transitions;
  std::vector<Transition> ts(tr.begin(), tr.end());
  std::vector<PastWindow> ws;
  for (int i = 0; i < 6; ++i) ws.push_back(past_window(tr, i, 3, 2, 1));
  const auto f = hidden_features(model, ts, ws);
  CHECK(f.rows() == model.feature_width() + 3);
  CHECK(f.cols() == 6);
  CHECK(f.col(4).tail(3) == encode_context(model, ws[4]));
}
