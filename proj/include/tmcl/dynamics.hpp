#pragma once

// Context-conditional multi-headed probabilistic dynamics model.
//
// A shared backbone embeds the normalized (state, action); a context encoder
// embeds the normalized K-step past window into z; every Gaussian head reads
// [backbone output; z] and predicts the normalized state delta.

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

#include "tmcl/buffer.hpp"
#include "tmcl/nn.hpp"

namespace tmcl {

class Rng;

/// Per-dimension standardization statistics. Standard deviations are floored at 1e-6.
struct Normalizer {
  Eigen::VectorXd state_mean, state_std;
  Eigen::VectorXd action_mean, action_std;
  Eigen::VectorXd delta_mean, delta_std;

  static constexpr double kStdFloor = 1e-6;

  static Normalizer identity(int state_dim, int action_dim);
  /// Statistics over every transition of the buffer.
  static Normalizer fit(const ReplayBuffer& buffer);

  int state_dim() const { return static_cast<int>(state_mean.size()); }
  int action_dim() const { return static_cast<int>(action_mean.size()); }

  Eigen::MatrixXd normalize_states(const Eigen::MatrixXd& states) const;
  Eigen::MatrixXd normalize_actions(const Eigen::MatrixXd& actions) const;
  Eigen::MatrixXd normalize_deltas(const Eigen::MatrixXd& deltas) const;
  Eigen::MatrixXd denormalize_deltas(const Eigen::MatrixXd& normalized) const;
};

struct ModelShape {
  int state_dim = 0;
  int action_dim = 0;
  int num_heads = 3;
  int hidden_width = 200;
  int hidden_layers = 4;
  /// Width of z; 0 disables the context encoder (and the auxiliary predictor).
  int context_dim = 10;
  int context_window = 10;
  int encoder_hidden_width = 200;
  int encoder_hidden_layers = 3;
  nn::VarianceBounds bounds{};
};

struct GaussianPrediction {
  Eigen::VectorXd mean;      // absolute next state
  Eigen::VectorXd variance;  // raw state units
  int head_index = 0;
};

/// Offsets of each parameter block inside the model's flat parameter vector.
struct ParameterLayout {
  struct Block {
    std::size_t offset = 0;
    std::size_t size = 0;
  };
  Block backbone;
  std::vector<Block> heads;
  Block encoder;
  Block backward_net;
  Block backward_head;
  std::size_t total = 0;
};

/// Everything needed to assemble a model from explicit parts.
struct ModelComponents {
  nn::DenseNet backbone;
  std::vector<nn::GaussianHead> heads;
  nn::DenseNet encoder;        // empty when context is disabled
  nn::DenseNet backward_net;   // empty when context is disabled
  nn::GaussianHead backward_head;
  Normalizer normalizer;
  int context_window = 10;
};

class MultiHeadDynamicsModel {
 public:
  MultiHeadDynamicsModel() = default;
  /// Randomly initialized model.
  MultiHeadDynamicsModel(const ModelShape& shape, Rng& rng);
  /// Validates that all parts chain; throws ConfigurationError otherwise.
  explicit MultiHeadDynamicsModel(ModelComponents parts);

  const ModelShape& shape() const { return shape_; }
  int state_dim() const { return shape_.state_dim; }
  int action_dim() const { return shape_.action_dim; }
  int num_heads() const { return static_cast<int>(heads_.size()); }
  int context_dim() const { return shape_.context_dim; }
  int context_window() const { return shape_.context_window; }
  bool has_context() const { return shape_.context_dim > 0; }
  int feature_width() const { return static_cast<int>(backbone_.output_width()); }

  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n);

  const nn::DenseNet& backbone() const { return backbone_; }
  const std::vector<nn::GaussianHead>& heads() const { return heads_; }
  std::vector<nn::GaussianHead>& mutable_heads() { return heads_; }
  const nn::DenseNet& encoder() const { return encoder_; }
  nn::DenseNet& mutable_encoder() { return encoder_; }
  const nn::DenseNet& backward_net() const { return backward_net_; }
  nn::DenseNet& mutable_backward_net() { return backward_net_; }
  const nn::GaussianHead& backward_head() const { return backward_head_; }
  nn::GaussianHead& mutable_backward_head() { return backward_head_; }

  // Batched building blocks; every sample is one column.

  /// [normalize(states); normalize(actions)]
  Eigen::MatrixXd normalized_inputs(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;
  /// Flattened normalized window, zero in invalid slots: K*(d_s+d_a) values.
  Eigen::VectorXd window_input(const PastWindow& window) const;
  int window_input_width() const { return shape_.context_window * (shape_.state_dim + shape_.action_dim); }
  /// z for each column of `window_inputs` (0 rows without context).
  Eigen::MatrixXd encode_batch(const Eigen::MatrixXd& window_inputs) const;
  Eigen::MatrixXd features_batch(const Eigen::MatrixXd& normalized_inputs) const;
  /// [features; contexts]
  static Eigen::MatrixXd head_inputs(const Eigen::MatrixXd& features, const Eigen::MatrixXd& contexts);

  // Flat parameter access; layout given by layout().

  const ParameterLayout& layout() const { return layout_; }
  std::size_t parameter_count() const { return layout_.total; }
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

 private:
  void build_layout();
  void validate() const;

  ModelShape shape_;
  nn::DenseNet backbone_;
  std::vector<nn::GaussianHead> heads_;
  nn::DenseNet encoder_;
  nn::DenseNet backward_net_;
  nn::GaussianHead backward_head_;
  Normalizer normalizer_;
  ParameterLayout layout_;
};

/// z = g(window). All windows with valid == 0 map to g(0).
Eigen::VectorXd encode_context(const MultiHeadDynamicsModel& model, const PastWindow& window);

/// One prediction per head; means are absolute next-state estimates.
std::vector<GaussianPrediction> predict_all_heads(const MultiHeadDynamicsModel& model,
                                                  const Eigen::VectorXd& state,
                                                  const Eigen::VectorXd& action,
                                                  const Eigen::VectorXd& context);

/// Gaussian NLL of head `head` against the transition's normalized true delta.
double head_nll(const MultiHeadDynamicsModel& model, int head, const Transition& transition,
                const Eigen::VectorXd& context);

/// Backbone output concatenated with z, per transition (read-only).
Eigen::MatrixXd hidden_features(const MultiHeadDynamicsModel& model,
                                const std::vector<Transition>& transitions,
                                const std::vector<PastWindow>& windows);

}  // namespace tmcl
