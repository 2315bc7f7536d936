#include "tmcl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tmcl/errors.hpp"
#include "tmcl/rng.hpp"

namespace tmcl::nn {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

void apply_activation(Activation act, Eigen::MatrixXd& x) {
  if (act == Activation::Swish) {
    x.array() = x.array() / (1.0 + (-x.array()).exp());
  }
}

// Multiplies `adjoint` in place by the activation's derivative at `pre`.
void apply_activation_derivative(Activation act, const Eigen::MatrixXd& pre,
                                 Eigen::MatrixXd& adjoint) {
  if (act == Activation::Swish) {
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
    adjoint.array() *= s * (1.0 + pre.array() * (1.0 - s));
  }
}

std::size_t write_layer(const DenseLayer& layer, std::span<double> out) {
  const auto nw = static_cast<std::size_t>(layer.weight.size());
  const auto nb = static_cast<std::size_t>(layer.bias.size());
  std::copy_n(layer.weight.data(), nw, out.data());
  std::copy_n(layer.bias.data(), nb, out.data() + nw);
  return nw + nb;
}

std::size_t read_layer(DenseLayer& layer, std::span<const double> in) {
  const auto nw = static_cast<std::size_t>(layer.weight.size());
  const auto nb = static_cast<std::size_t>(layer.bias.size());
  std::copy_n(in.data(), nw, layer.weight.data());
  std::copy_n(in.data() + nw, nb, layer.bias.data());
  return nw + nb;
}

// Accumulates gradients of a layer given the adjoint of its pre-activation.
std::size_t accumulate_layer_grad(const DenseLayer& layer, const Eigen::MatrixXd& input,
                                  const Eigen::MatrixXd& pre_adjoint, double* grad) {
  Eigen::Map<Eigen::MatrixXd> gw(grad, layer.out_width(), layer.in_width());
  Eigen::Map<Eigen::VectorXd> gb(grad + layer.weight.size(), layer.out_width());
  gw.noalias() += pre_adjoint * input.transpose();
  gb.noalias() += pre_adjoint.rowwise().sum();
  return layer.parameter_count();
}

}  // namespace

std::string to_string(Activation a) {
  return a == Activation::Swish ? "swish" : "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "swish") return Activation::Swish;
  if (s == "identity") return Activation::Identity;
  throw ConfigurationError("unknown activation '" + s + "'");
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double swish(double x) { return x * sigmoid(x); }

double swish_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double softplus_inverse(double y) {
  if (y <= 0) throw DomainError("softplus_inverse requires y > 0");
  return y + std::log(-std::expm1(-y));
}

DenseLayer DenseLayer::make(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng) {
  DenseLayer layer = zeros(in, out, act);
  const double limit = 1.0 / std::sqrt(static_cast<double>(in));
  // Column-major fill order so the draw sequence matches the flat layout.
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = rng.uniform(-limit, limit);
  }
  return layer;
}

DenseLayer DenseLayer::zeros(Eigen::Index in, Eigen::Index out, Activation act) {
  if (in <= 0 || out <= 0) throw ConfigurationError("layer widths must be positive");
  return DenseLayer{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out), act};
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].bias.size() != layers_[i].out_width()) {
      throw ConfigurationError("layer " + std::to_string(i) + ": bias width mismatch");
    }
    if (i > 0 && layers_[i].in_width() != layers_[i - 1].out_width()) {
      throw ConfigurationError("layer " + std::to_string(i) + ": input width " +
                               std::to_string(layers_[i].in_width()) + " does not match " +
                               std::to_string(layers_[i - 1].out_width()));
    }
  }
}

DenseNet DenseNet::make(const std::vector<Eigen::Index>& widths, Activation hidden,
                        Activation output, Rng& rng) {
  if (widths.size() < 2) throw ConfigurationError("a network needs at least two widths");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers.push_back(DenseLayer::make(widths[i], widths[i + 1], last ? output : hidden, rng));
  }
  return DenseNet(std::move(layers));
}

Eigen::Index DenseNet::input_width() const {
  return layers_.empty() ? 0 : layers_.front().in_width();
}

Eigen::Index DenseNet::output_width() const {
  return layers_.empty() ? 0 : layers_.back().out_width();
}

Eigen::VectorXd DenseNet::forward(const Eigen::VectorXd& input) const {
  return forward_batch(Eigen::MatrixXd(input)).col(0);
}

Eigen::MatrixXd DenseNet::forward_batch(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_width()) {
    throw ConfigurationError("input width " + std::to_string(inputs.rows()) +
                             " does not match network input " + std::to_string(input_width()));
  }
  Eigen::MatrixXd x = inputs;
  for (const auto& layer : layers_) {
    Eigen::MatrixXd y = layer.weight * x;
    y.colwise() += layer.bias;
    apply_activation(layer.activation, y);
    x = std::move(y);
  }
  return x;
}

Eigen::MatrixXd DenseNet::forward_batch(const Eigen::MatrixXd& inputs, ForwardCache& cache) const {
  if (inputs.rows() != input_width()) {
    throw ConfigurationError("input width " + std::to_string(inputs.rows()) +
                             " does not match network input " + std::to_string(input_width()));
  }
  cache.inputs.resize(layers_.size());
  cache.pre_activations.resize(layers_.size());
  Eigen::MatrixXd x = inputs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    cache.inputs[i] = x;
    Eigen::MatrixXd y = layer.weight * x;
    y.colwise() += layer.bias;
    cache.pre_activations[i] = y;
    apply_activation(layer.activation, y);
    x = std::move(y);
  }
  return x;
}

Eigen::MatrixXd DenseNet::backward(const ForwardCache& cache, const Eigen::MatrixXd& output_adjoint,
                                   std::span<double> grad) const {
  if (grad.size() != parameter_count()) {
    throw ConfigurationError("gradient buffer has the wrong size");
  }
  if (cache.inputs.size() != layers_.size()) {
    throw ConfigurationError("forward cache does not belong to this network");
  }
  std::vector<std::size_t> offsets(layers_.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets[i] = offset;
    offset += layers_[i].parameter_count();
  }

  Eigen::MatrixXd adjoint = output_adjoint;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& layer = layers_[k];
    apply_activation_derivative(layer.activation, cache.pre_activations[k], adjoint);
    accumulate_layer_grad(layer, cache.inputs[k], adjoint, grad.data() + offsets[k]);
    adjoint = layer.weight.transpose() * adjoint;
  }
  return adjoint;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.parameter_count();
  return n;
}

void DenseNet::write_parameters(std::span<double> out) const {
  if (out.size() != parameter_count()) throw ConfigurationError("parameter buffer size mismatch");
  std::size_t offset = 0;
  for (const auto& layer : layers_) offset += write_layer(layer, out.subspan(offset));
}

void DenseNet::read_parameters(std::span<const double> in) {
  if (in.size() != parameter_count()) throw ConfigurationError("parameter buffer size mismatch");
  std::size_t offset = 0;
  for (auto& layer : layers_) offset += read_layer(layer, in.subspan(offset));
}

double VarianceBounds::log_min() const { return std::log(min_variance); }
double VarianceBounds::log_max() const { return std::log(max_variance); }

double bound_log_variance(double raw, const VarianceBounds& b) {
  const double lo = b.log_min();
  const double hi = b.log_max();
  const double upper = hi - softplus(hi - raw);
  return std::clamp(lo + softplus(upper - lo), lo, hi);
}

double bound_log_variance_derivative(double raw, const VarianceBounds& b) {
  const double lo = b.log_min();
  const double hi = b.log_max();
  const double upper = hi - softplus(hi - raw);
  const double value = lo + softplus(upper - lo);
  if (value > hi) return 0.0;
  return sigmoid(hi - raw) * sigmoid(upper - lo);
}

double unbound_log_variance(double log_variance, const VarianceBounds& b) {
  const double lo = b.log_min();
  const double hi = b.log_max();
  if (!(log_variance > lo && log_variance < hi)) {
    throw DomainError("log-variance must lie strictly inside the bounds");
  }
  const double upper = lo + softplus_inverse(log_variance - lo);
  return hi - softplus_inverse(hi - upper);
}

GaussianHead::GaussianHead(DenseLayer mean, DenseLayer raw_variance, VarianceBounds bounds)
    : mean_(std::move(mean)), raw_variance_(std::move(raw_variance)), bounds_(bounds) {
  if (mean_.in_width() != raw_variance_.in_width() ||
      mean_.out_width() != raw_variance_.out_width()) {
    throw ConfigurationError("mean and variance layers of a Gaussian head must have equal shapes");
  }
  mean_.activation = Activation::Identity;
  raw_variance_.activation = Activation::Identity;
}

GaussianHead GaussianHead::make(Eigen::Index in, Eigen::Index out, Rng& rng,
                                VarianceBounds bounds) {
  auto mean = DenseLayer::make(in, out, Activation::Identity, rng);
  auto var = DenseLayer::make(in, out, Activation::Identity, rng);
  return GaussianHead(std::move(mean), std::move(var), bounds);
}

GaussianHead::Output GaussianHead::forward_batch(const Eigen::MatrixXd& features) const {
  if (features.rows() != input_width()) {
    throw ConfigurationError("head input width mismatch");
  }
  Output out;
  out.mean = mean_.weight * features;
  out.mean.colwise() += mean_.bias;
  out.raw = raw_variance_.weight * features;
  out.raw.colwise() += raw_variance_.bias;
  out.log_variance = out.raw.unaryExpr([this](double r) { return bound_log_variance(r, bounds_); });
  return out;
}

void GaussianHead::backward(const Eigen::MatrixXd& features, const Output& out,
                            const Eigen::MatrixXd& mean_adjoint,
                            const Eigen::MatrixXd& log_variance_adjoint, std::span<double> grad,
                            Eigen::MatrixXd& features_adjoint) const {
  if (grad.size() != parameter_count()) throw ConfigurationError("gradient buffer size mismatch");
  const Eigen::MatrixXd raw_adjoint =
      log_variance_adjoint.cwiseProduct(out.raw.unaryExpr(
          [this](double r) { return bound_log_variance_derivative(r, bounds_); }));
  std::size_t offset = accumulate_layer_grad(mean_, features, mean_adjoint, grad.data());
  accumulate_layer_grad(raw_variance_, features, raw_adjoint, grad.data() + offset);
  features_adjoint.noalias() += mean_.weight.transpose() * mean_adjoint;
  features_adjoint.noalias() += raw_variance_.weight.transpose() * raw_adjoint;
}

std::size_t GaussianHead::parameter_count() const {
  return mean_.parameter_count() + raw_variance_.parameter_count();
}

void GaussianHead::write_parameters(std::span<double> out) const {
  if (out.size() != parameter_count()) throw ConfigurationError("parameter buffer size mismatch");
  const std::size_t n = write_layer(mean_, out);
  write_layer(raw_variance_, out.subspan(n));
}

void GaussianHead::read_parameters(std::span<const double> in) {
  if (in.size() != parameter_count()) throw ConfigurationError("parameter buffer size mismatch");
  const std::size_t n = read_layer(mean_, in);
  read_layer(raw_variance_, in.subspan(n));
}

double gaussian_nll(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance,
                    const Eigen::VectorXd& target) {
  if (mean.size() != variance.size() || mean.size() != target.size()) {
    throw ConfigurationError("gaussian_nll: vectors must have equal width");
  }
  for (Eigen::Index j = 0; j < variance.size(); ++j) {
    if (!(variance[j] > 0.0)) throw DomainError("gaussian_nll: variance must be positive");
  }
  return gaussian_nll_log_variance(mean, variance.array().log().matrix(), target);
}

double gaussian_nll_log_variance(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_variance,
                                 const Eigen::VectorXd& target) {
  if (mean.size() != log_variance.size() || mean.size() != target.size()) {
    throw ConfigurationError("gaussian_nll: vectors must have equal width");
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    const double err = target[j] - mean[j];
    total += 0.5 * err * err * std::exp(-log_variance[j]) + 0.5 * log_variance[j] + kHalfLog2Pi;
  }
  return total;
}

AdamState::AdamState(std::size_t parameter_count, AdamConfig config)
    : config_(config),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count))) {}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.size()) {
    throw ConfigurationError("adam_step: parameter, gradient and moment sizes differ");
  }
  const auto& c = state.config_;
  ++state.steps_;
  const double t = static_cast<double>(state.steps_);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  bool finite = true;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double g = grads[i];
    state.m_[k] = c.beta1 * state.m_[k] + (1.0 - c.beta1) * g;
    state.v_[k] = c.beta2 * state.v_[k] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m_[k] / correction1;
    const double v_hat = state.v_[k] / correction2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    finite = finite && std::isfinite(params[i]);
  }
  if (!finite) throw std::runtime_error("adam_step produced a non-finite parameter");
}

}  // namespace tmcl::nn
