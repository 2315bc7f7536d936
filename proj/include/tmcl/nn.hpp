#pragma once

// Minimal differentiable MLP substrate: dense layers with swish, diagonal
// Gaussian heads, Gaussian NLL, reverse-mode gradients and Adam.
//
// Batched routines take one sample per column. Parameters of every network
// can be flattened into a contiguous array; gradients use the same layout, so
// optimizers and checkpoints work on plain `std::span<double>`s.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tmcl {
class Rng;
}

namespace tmcl::nn {

enum class Activation { Swish, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

double sigmoid(double x);
double swish(double x);
/// d/dx swish(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
double swish_derivative(double x);

double softplus(double x);
double softplus_inverse(double y);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::Identity;

  Eigen::Index in_width() const { return weight.cols(); }
  Eigen::Index out_width() const { return weight.rows(); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(weight.size() + bias.size());
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
  static DenseLayer make(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng);
  static DenseLayer zeros(Eigen::Index in, Eigen::Index out, Activation act);
};

/// Per-layer inputs and pre-activations recorded by a batched forward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre_activations;
};

class DenseNet {
 public:
  DenseNet() = default;
  /// Throws ConfigurationError if consecutive layer widths do not chain.
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// widths = {in, h1, ..., out}; hidden layers use `hidden`, the last layer `output`.
  static DenseNet make(const std::vector<Eigen::Index>& widths, Activation hidden,
                       Activation output, Rng& rng);

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs, ForwardCache& cache) const;

  /// Accumulates dL/dparams into `grad` (flat layout, parameter_count() long)
  /// and returns dL/dinputs.
  Eigen::MatrixXd backward(const ForwardCache& cache, const Eigen::MatrixXd& output_adjoint,
                           std::span<double> grad) const;

  bool empty() const { return layers_.empty(); }
  Eigen::Index input_width() const;
  Eigen::Index output_width() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  std::size_t parameter_count() const;
  void write_parameters(std::span<double> out) const;
  void read_parameters(std::span<const double> in);

 private:
  std::vector<DenseLayer> layers_;
};

/// Log-variance lies in [log(min_variance), log(max_variance)].
struct VarianceBounds {
  double min_variance = 1e-8;
  double max_variance = 1e4;
  double log_min() const;
  double log_max() const;
};

/// Soft-bounds a raw head output into the log-variance range (softplus on both
/// sides, followed by a hard clamp).
double bound_log_variance(double raw, const VarianceBounds& b);
double bound_log_variance_derivative(double raw, const VarianceBounds& b);
/// Raw value whose bounded log-variance equals `log_variance`.
double unbound_log_variance(double log_variance, const VarianceBounds& b);

/// Diagonal Gaussian: one linear layer for the mean, one for the raw log-variance.
class GaussianHead {
 public:
  struct Output {
    Eigen::MatrixXd mean;          // d x n
    Eigen::MatrixXd raw;           // d x n
    Eigen::MatrixXd log_variance;  // d x n
  };

  GaussianHead() = default;
  GaussianHead(DenseLayer mean, DenseLayer raw_variance, VarianceBounds bounds = {});
  static GaussianHead make(Eigen::Index in, Eigen::Index out, Rng& rng, VarianceBounds bounds = {});

  Output forward_batch(const Eigen::MatrixXd& features) const;

  /// Accumulates parameter gradients into `grad`; adds dL/dfeatures into
  /// `features_adjoint` (must already be sized in x n).
  void backward(const Eigen::MatrixXd& features, const Output& out,
                const Eigen::MatrixXd& mean_adjoint, const Eigen::MatrixXd& log_variance_adjoint,
                std::span<double> grad, Eigen::MatrixXd& features_adjoint) const;

  const DenseLayer& mean_layer() const { return mean_; }
  const DenseLayer& variance_layer() const { return raw_variance_; }
  DenseLayer& mutable_mean_layer() { return mean_; }
  DenseLayer& mutable_variance_layer() { return raw_variance_; }
  const VarianceBounds& bounds() const { return bounds_; }
  Eigen::Index input_width() const { return mean_.in_width(); }
  Eigen::Index output_width() const { return mean_.out_width(); }

  std::size_t parameter_count() const;
  void write_parameters(std::span<double> out) const;
  void read_parameters(std::span<const double> in);

 private:
  DenseLayer mean_;
  DenseLayer raw_variance_;
  VarianceBounds bounds_;
};

/// sum_j (t_j - m_j)^2 / (2 v_j) + 0.5 * ln(2 pi v_j). Throws DomainError on v_j <= 0.
double gaussian_nll(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance,
                    const Eigen::VectorXd& target);
/// Same quantity parameterized by log-variance.
double gaussian_nll_log_variance(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_variance,
                                 const Eigen::VectorXd& target);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t parameter_count, AdamConfig config = {});

  const AdamConfig& config() const { return config_; }
  std::int64_t step_count() const { return steps_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }
  std::size_t size() const { return static_cast<std::size_t>(m_.size()); }

 private:
  friend void adam_step(std::span<double>, std::span<const double>, AdamState&);
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::int64_t steps_ = 0;
};

/// Bias-corrected Adam update in place. Throws std::runtime_error if any
/// parameter becomes non-finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace tmcl::nn
