#pragma once

// Shared fixtures: hand-built models with known dynamics and small random
// models and buffers for property tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tmcl/buffer.hpp"
#include "tmcl/dynamics.hpp"
#include "tmcl/envs.hpp"
#include "tmcl/nn.hpp"
#include "tmcl/rng.hpp"

namespace tmcl::testing {

inline nn::DenseLayer identity_layer(Eigen::Index n) {
  nn::DenseLayer l = nn::DenseLayer::zeros(n, n, nn::Activation::Identity);
  l.weight.setIdentity();
  return l;
}

/// Gaussian head with mean W x + b and a constant log-variance.
inline nn::GaussianHead linear_head(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, double log_variance) {
  nn::DenseLayer mean = nn::DenseLayer::zeros(w.cols(), w.rows(), nn::Activation::Identity);
  mean.weight = w;
  mean.bias = b;
  nn::DenseLayer var = nn::DenseLayer::zeros(w.cols(), w.rows(), nn::Activation::Identity);
  nn::VarianceBounds bounds;
  var.bias.setConstant(nn::unbound_log_variance(log_variance, bounds));
  return nn::GaussianHead(mean, var, bounds);
}

/// Model whose backbone passes [s; a] through unchanged (identity
/// normalizer) so that head h predicts delta = W_h [s; a] + b_h exactly.
/// With context_dim > 0 the encoder exists but the heads ignore z.
inline MultiHeadDynamicsModel linear_model(int ds, int da, const std::vector<Eigen::MatrixXd>& weights,
                                           const std::vector<Eigen::VectorXd>& biases, double log_variance,
                                           int context_dim = 0, int k = 2) {
  ModelComponents parts;
  parts.backbone = nn::DenseNet({identity_layer(ds + da)});
  parts.normalizer = Normalizer::identity(ds, da);
  parts.context_window = k;
  for (std::size_t h = 0; h < weights.size(); ++h) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(ds, ds + da + context_dim);
    w.leftCols(ds + da) = weights[h];
    parts.heads.push_back(linear_head(w, biases[h], log_variance));
  }
  if (context_dim > 0) {
    Rng rng(99);
    parts.encoder = nn::DenseNet::make({k * (ds + da), 4, context_dim}, nn::Activation::Swish,
                                       nn::Activation::Identity, rng);
    parts.backward_net = nn::DenseNet({identity_layer(ds + da)});
    parts.backward_head = nn::GaussianHead(nn::DenseLayer::zeros(ds + da + context_dim, ds, nn::Activation::Identity),
                                           nn::DenseLayer::zeros(ds + da + context_dim, ds, nn::Activation::Identity));
  }
  return MultiHeadDynamicsModel(std::move(parts));
}

/// Head h of the result reproduces toymodes mode order[h] exactly.
inline MultiHeadDynamicsModel toymodes_specialists(std::vector<int> order = {0, 1}, double log_variance = -9.0,
                                                   int context_dim = 0) {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  for (int mode : order) {
    const auto m = toymodes_matrices(mode);
    Eigen::MatrixXd wh(2, 4);
    wh.leftCols(2) = m.a - Eigen::Matrix2d::Identity();
    wh.rightCols(2) = m.b;
    w.push_back(wh);
    b.push_back(Eigen::Vector2d::Zero());
  }
  return linear_model(2, 2, w, b, log_variance, context_dim);
}

/// Randomly initialized model with every parameter redrawn uniformly in [-1, 1].
inline MultiHeadDynamicsModel random_model(const ModelShape& shape, Rng& rng, double scale = 1.0) {
  MultiHeadDynamicsModel model(shape, rng);
  Eigen::VectorXd p(static_cast<Eigen::Index>(model.parameter_count()));
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = rng.uniform(-scale, scale);
  model.set_parameters(p);
  return model;
}

inline ModelShape tiny_shape(int heads, int context_dim, int ds = 2, int da = 1) {
  ModelShape s;
  s.state_dim = ds;
  s.action_dim = da;
  s.num_heads = heads;
  s.hidden_width = 6;
  s.hidden_layers = 2;
  s.context_dim = context_dim;
  s.context_window = 3;
  s.encoder_hidden_width = 5;
  s.encoder_hidden_layers = 1;
  return s;
}

/// Trajectories of Gaussian states and actions with unrelated next states.
inline ReplayBuffer random_buffer(int trajectories, int length, int ds, int da, Rng& rng) {
  ReplayBuffer buffer;
  for (int i = 0; i < trajectories; ++i) {
    Trajectory t;
    t.label = i % 2;
    Eigen::VectorXd s(ds);
    for (int j = 0; j < ds; ++j) s[j] = rng.normal();
    for (int step = 0; step < length; ++step) {
      Transition tr;
      tr.state = s;
      tr.action.resize(da);
      for (int j = 0; j < da; ++j) tr.action[j] = rng.uniform(-1.0, 1.0);
      tr.next_state.resize(ds);
      for (int j = 0; j < ds; ++j) tr.next_state[j] = s[j] + 0.5 * rng.normal();
      tr.step_index = step;
      s = tr.next_state;
      t.transitions.push_back(tr);
    }
    buffer.add(std::move(t));
  }
  return buffer;
}

/// Toymodes trajectories under uniformly random actions, alternating modes
/// starting with `first_mode`.
inline ReplayBuffer toymodes_buffer(int trajectories, std::uint64_t seed, double noise_std = 0.01,
                                    int first_mode = 0) {
  Rng rng(seed);
  ReplayBuffer buffer;
  EnvOptions opts;
  opts.toy.noise_std = noise_std;
  for (int i = 0; i < trajectories; ++i) {
    const int mode = (first_mode + i) % 2;
    EnvContext ctx(EnvFamily::ToyModes, {static_cast<double>(mode)}, Split::Train);
    auto env = make_environment(ctx, opts);
    Trajectory t;
    t.label = mode;
    Eigen::VectorXd obs = env->reset(rng);
    for (int step = 0; step < env->spec().episode_length; ++step) {
      Transition tr;
      tr.state = obs;
      tr.action = Eigen::Vector2d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      const auto res = env->step(tr.action);
      tr.next_state = res.observation;
      tr.reward = res.reward;
      tr.step_index = step;
      obs = res.observation;
      t.transitions.push_back(tr);
    }
    buffer.add(std::move(t));
  }
  return buffer;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace tmcl::testing
