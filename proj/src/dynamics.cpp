#include "tmcl/dynamics.hpp"

#include <string>

#include "tmcl/errors.hpp"
#include "tmcl/rng.hpp"

namespace tmcl {

namespace {

Eigen::VectorXd floored(Eigen::VectorXd v) {
  return v.cwiseMax(Normalizer::kStdFloor);
}

void fit_stats(const Eigen::MatrixXd& data, Eigen::VectorXd& mean, Eigen::VectorXd& std) {
  mean = data.rowwise().mean();
  const Eigen::MatrixXd centered = data.colwise() - mean;
  std = floored((centered.array().square().rowwise().sum() / static_cast<double>(data.cols()))
                    .sqrt()
                    .matrix());
}

std::vector<Eigen::Index> repeat_width(Eigen::Index in, int width, int layers) {
  std::vector<Eigen::Index> widths{in};
  for (int i = 0; i < layers; ++i) widths.push_back(width);
  return widths;
}

}  // namespace

Normalizer Normalizer::identity(int state_dim, int action_dim) {
  Normalizer n;
  n.state_mean = Eigen::VectorXd::Zero(state_dim);
  n.state_std = Eigen::VectorXd::Ones(state_dim);
  n.action_mean = Eigen::VectorXd::Zero(action_dim);
  n.action_std = Eigen::VectorXd::Ones(action_dim);
  n.delta_mean = Eigen::VectorXd::Zero(state_dim);
  n.delta_std = Eigen::VectorXd::Ones(state_dim);
  return n;
}

Normalizer Normalizer::fit(const ReplayBuffer& buffer) {
  const auto count = static_cast<Eigen::Index>(buffer.transition_count());
  if (count == 0) throw ConfigurationError("cannot fit normalization statistics on an empty buffer");
  const auto& first = buffer.trajectories().front().transitions.front();
  const auto ds = first.state.size();
  const auto da = first.action.size();
  Eigen::MatrixXd states(ds, count), actions(da, count), deltas(ds, count);
  Eigen::Index col = 0;
  for (const auto& traj : buffer.trajectories()) {
    for (const auto& t : traj.transitions) {
      states.col(col) = t.state;
      actions.col(col) = t.action;
      deltas.col(col) = t.next_state - t.state;
      ++col;
    }
  }
  Normalizer n;
  fit_stats(states, n.state_mean, n.state_std);
  fit_stats(actions, n.action_mean, n.action_std);
  fit_stats(deltas, n.delta_mean, n.delta_std);
  return n;
}

Eigen::MatrixXd Normalizer::normalize_states(const Eigen::MatrixXd& states) const {
  return ((states.colwise() - state_mean).array().colwise() / state_std.array()).matrix();
}

Eigen::MatrixXd Normalizer::normalize_actions(const Eigen::MatrixXd& actions) const {
  return ((actions.colwise() - action_mean).array().colwise() / action_std.array()).matrix();
}

Eigen::MatrixXd Normalizer::normalize_deltas(const Eigen::MatrixXd& deltas) const {
  return ((deltas.colwise() - delta_mean).array().colwise() / delta_std.array()).matrix();
}

Eigen::MatrixXd Normalizer::denormalize_deltas(const Eigen::MatrixXd& normalized) const {
  return ((normalized.array().colwise() * delta_std.array()).matrix()).colwise() + delta_mean;
}

MultiHeadDynamicsModel::MultiHeadDynamicsModel(const ModelShape& shape, Rng& rng) : shape_(shape) {
  if (shape.state_dim <= 0 || shape.action_dim <= 0) {
    throw ConfigurationError("state and action widths must be positive");
  }
  if (shape.num_heads < 1) throw ConfigurationError("a model needs at least one head");
  if (shape.hidden_layers < 1 || shape.hidden_width < 1) {
    throw ConfigurationError("backbone needs at least one hidden layer");
  }
  if (shape.context_dim < 0 || shape.context_window < 0) {
    throw ConfigurationError("context sizes must be non-negative");
  }
  const Eigen::Index in = shape.state_dim + shape.action_dim;
  const Eigen::Index head_in = shape.hidden_width + shape.context_dim;
  backbone_ = nn::DenseNet::make(repeat_width(in, shape.hidden_width, shape.hidden_layers),
                                 nn::Activation::Swish, nn::Activation::Swish, rng);
  for (int h = 0; h < shape.num_heads; ++h) {
    heads_.push_back(nn::GaussianHead::make(head_in, shape.state_dim, rng, shape.bounds));
  }
  if (shape.context_dim > 0) {
    if (shape.context_window < 1 || shape.encoder_hidden_layers < 1) {
      throw ConfigurationError("context encoder needs a window and at least one hidden layer");
    }
    auto widths = repeat_width(window_input_width(), shape.encoder_hidden_width,
                               shape.encoder_hidden_layers);
    widths.push_back(shape.context_dim);
    encoder_ = nn::DenseNet::make(widths, nn::Activation::Swish, nn::Activation::Identity, rng);
    backward_net_ = nn::DenseNet::make(repeat_width(in, shape.hidden_width, shape.hidden_layers),
                                       nn::Activation::Swish, nn::Activation::Swish, rng);
    backward_head_ = nn::GaussianHead::make(head_in, shape.state_dim, rng, shape.bounds);
  }
  normalizer_ = Normalizer::identity(shape.state_dim, shape.action_dim);
  build_layout();
}

MultiHeadDynamicsModel::MultiHeadDynamicsModel(ModelComponents parts)
    : backbone_(std::move(parts.backbone)),
      heads_(std::move(parts.heads)),
      encoder_(std::move(parts.encoder)),
      backward_net_(std::move(parts.backward_net)),
      backward_head_(std::move(parts.backward_head)),
      normalizer_(std::move(parts.normalizer)) {
  if (backbone_.empty()) throw ConfigurationError("model needs a backbone");
  if (heads_.empty()) throw ConfigurationError("a model needs at least one head");
  shape_.state_dim = normalizer_.state_dim();
  shape_.action_dim = normalizer_.action_dim();
  shape_.num_heads = static_cast<int>(heads_.size());
  shape_.hidden_width = static_cast<int>(backbone_.output_width());
  shape_.hidden_layers = static_cast<int>(backbone_.layers().size());
  shape_.context_dim = encoder_.empty() ? 0 : static_cast<int>(encoder_.output_width());
  shape_.context_window = parts.context_window;
  shape_.encoder_hidden_layers =
      encoder_.empty() ? 0 : static_cast<int>(encoder_.layers().size()) - 1;
  shape_.encoder_hidden_width =
      encoder_.layers().size() > 1 ? static_cast<int>(encoder_.layers().front().out_width()) : 0;
  shape_.bounds = heads_.front().bounds();
  validate();
  build_layout();
}

void MultiHeadDynamicsModel::validate() const {
  const Eigen::Index in = shape_.state_dim + shape_.action_dim;
  if (backbone_.input_width() != in) {
    throw ConfigurationError("backbone input width " + std::to_string(backbone_.input_width()) +
                             " != d_s + d_a = " + std::to_string(in));
  }
  const Eigen::Index head_in = backbone_.output_width() + shape_.context_dim;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (heads_[h].input_width() != head_in || heads_[h].output_width() != shape_.state_dim) {
      throw ConfigurationError("head " + std::to_string(h) + " does not match backbone + context");
    }
  }
  if (!encoder_.empty()) {
    if (encoder_.input_width() != window_input_width()) {
      throw ConfigurationError("context encoder input does not match K * (d_s + d_a)");
    }
    if (backward_net_.empty() || backward_net_.input_width() != in ||
        backward_head_.input_width() != backward_net_.output_width() + shape_.context_dim ||
        backward_head_.output_width() != shape_.state_dim) {
      throw ConfigurationError("backward predictor does not match the model");
    }
  }
}

void MultiHeadDynamicsModel::build_layout() {
  layout_ = ParameterLayout{};
  std::size_t offset = 0;
  auto block = [&offset](std::size_t size) {
    ParameterLayout::Block b{offset, size};
    offset += size;
    return b;
  };
  layout_.backbone = block(backbone_.parameter_count());
  for (const auto& head : heads_) layout_.heads.push_back(block(head.parameter_count()));
  layout_.encoder = block(encoder_.parameter_count());
  layout_.backward_net = block(backward_net_.parameter_count());
  layout_.backward_head = block(has_context() ? backward_head_.parameter_count() : 0);
  layout_.total = offset;
}

void MultiHeadDynamicsModel::set_normalizer(Normalizer n) {
  if (n.state_dim() != shape_.state_dim || n.action_dim() != shape_.action_dim ||
      n.delta_mean.size() != shape_.state_dim) {
    throw ConfigurationError("normalizer widths do not match the model");
  }
  if ((n.state_std.array() <= 0).any() || (n.action_std.array() <= 0).any() ||
      (n.delta_std.array() <= 0).any()) {
    throw ConfigurationError("normalizer standard deviations must be positive");
  }
  normalizer_ = std::move(n);
}

Eigen::MatrixXd MultiHeadDynamicsModel::normalized_inputs(const Eigen::MatrixXd& states,
                                                          const Eigen::MatrixXd& actions) const {
  if (states.rows() != shape_.state_dim || actions.rows() != shape_.action_dim ||
      states.cols() != actions.cols()) {
    throw ConfigurationError("state/action batch does not match the model");
  }
  Eigen::MatrixXd x(shape_.state_dim + shape_.action_dim, states.cols());
  x.topRows(shape_.state_dim) = normalizer_.normalize_states(states);
  x.bottomRows(shape_.action_dim) = normalizer_.normalize_actions(actions);
  return x;
}

Eigen::VectorXd MultiHeadDynamicsModel::window_input(const PastWindow& window) const {
  const int ds = shape_.state_dim;
  const int da = shape_.action_dim;
  const int k = shape_.context_window;
  if (window.length() != k || window.states.rows() != ds || window.actions.rows() != da ||
      window.actions.cols() != k) {
    throw ConfigurationError("past window does not match the model's context window");
  }
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(window_input_width());
  for (int j = k - window.valid; j < k; ++j) {
    flat.segment(j * (ds + da), ds) =
        (window.states.col(j) - normalizer_.state_mean).cwiseQuotient(normalizer_.state_std);
    flat.segment(j * (ds + da) + ds, da) =
        (window.actions.col(j) - normalizer_.action_mean).cwiseQuotient(normalizer_.action_std);
  }
  return flat;
}

Eigen::MatrixXd MultiHeadDynamicsModel::encode_batch(const Eigen::MatrixXd& window_inputs) const {
  if (!has_context()) return Eigen::MatrixXd(0, window_inputs.cols());
  return encoder_.forward_batch(window_inputs);
}

Eigen::MatrixXd MultiHeadDynamicsModel::features_batch(const Eigen::MatrixXd& normalized_inputs) const {
  return backbone_.forward_batch(normalized_inputs);
}

Eigen::MatrixXd MultiHeadDynamicsModel::head_inputs(const Eigen::MatrixXd& features,
                                                    const Eigen::MatrixXd& contexts) {
  if (contexts.rows() == 0) return features;
  if (features.cols() != contexts.cols()) {
    throw ConfigurationError("feature and context batches differ in size");
  }
  Eigen::MatrixXd g(features.rows() + contexts.rows(), features.cols());
  g.topRows(features.rows()) = features;
  g.bottomRows(contexts.rows()) = contexts;
  return g;
}

Eigen::VectorXd MultiHeadDynamicsModel::parameters() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(layout_.total));
  std::span<double> all(flat.data(), layout_.total);
  auto sub = [&all](const ParameterLayout::Block& b) { return all.subspan(b.offset, b.size); };
  backbone_.write_parameters(sub(layout_.backbone));
  for (std::size_t h = 0; h < heads_.size(); ++h) heads_[h].write_parameters(sub(layout_.heads[h]));
  encoder_.write_parameters(sub(layout_.encoder));
  backward_net_.write_parameters(sub(layout_.backward_net));
  if (has_context()) backward_head_.write_parameters(sub(layout_.backward_head));
  return flat;
}

void MultiHeadDynamicsModel::set_parameters(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != layout_.total) {
    throw ConfigurationError("flat parameter vector has the wrong size");
  }
  std::span<const double> all(flat.data(), layout_.total);
  auto sub = [&all](const ParameterLayout::Block& b) { return all.subspan(b.offset, b.size); };
  backbone_.read_parameters(sub(layout_.backbone));
  for (std::size_t h = 0; h < heads_.size(); ++h) heads_[h].read_parameters(sub(layout_.heads[h]));
  encoder_.read_parameters(sub(layout_.encoder));
  backward_net_.read_parameters(sub(layout_.backward_net));
  if (has_context()) backward_head_.read_parameters(sub(layout_.backward_head));
}

Eigen::VectorXd encode_context(const MultiHeadDynamicsModel& model, const PastWindow& window) {
  if (!model.has_context()) return Eigen::VectorXd(0);
  return model.encode_batch(Eigen::MatrixXd(model.window_input(window))).col(0);
}

std::vector<GaussianPrediction> predict_all_heads(const MultiHeadDynamicsModel& model,
                                                  const Eigen::VectorXd& state,
                                                  const Eigen::VectorXd& action,
                                                  const Eigen::VectorXd& context) {
  if (context.size() != model.context_dim()) {
    throw ConfigurationError("context width " + std::to_string(context.size()) + " != " +
                             std::to_string(model.context_dim()));
  }
  const auto features =
      model.features_batch(model.normalized_inputs(Eigen::MatrixXd(state), Eigen::MatrixXd(action)));
  const auto g = MultiHeadDynamicsModel::head_inputs(features, Eigen::MatrixXd(context));
  const auto& norm = model.normalizer();
  std::vector<GaussianPrediction> out;
  out.reserve(static_cast<std::size_t>(model.num_heads()));
  for (int h = 0; h < model.num_heads(); ++h) {
    const auto o = model.heads()[static_cast<std::size_t>(h)].forward_batch(g);
    GaussianPrediction p;
    p.mean = state + norm.denormalize_deltas(o.mean).col(0);
    p.variance = o.log_variance.col(0).array().exp().matrix().cwiseProduct(
        norm.delta_std.cwiseProduct(norm.delta_std));
    p.head_index = h;
    out.push_back(std::move(p));
  }
  return out;
}

double head_nll(const MultiHeadDynamicsModel& model, int head, const Transition& transition,
                const Eigen::VectorXd& context) {
  if (head < 0 || head >= model.num_heads()) throw ConfigurationError("head index out of range");
  if (context.size() != model.context_dim()) throw ConfigurationError("context width mismatch");
  const auto features = model.features_batch(
      model.normalized_inputs(Eigen::MatrixXd(transition.state), Eigen::MatrixXd(transition.action)));
  const auto g = MultiHeadDynamicsModel::head_inputs(features, Eigen::MatrixXd(context));
  const auto o = model.heads()[static_cast<std::size_t>(head)].forward_batch(g);
  const Eigen::VectorXd target =
      model.normalizer().normalize_deltas(Eigen::MatrixXd(transition.next_state - transition.state)).col(0);
  return nn::gaussian_nll_log_variance(o.mean.col(0), o.log_variance.col(0), target);
}

Eigen::MatrixXd hidden_features(const MultiHeadDynamicsModel& model,
                                const std::vector<Transition>& transitions,
                                const std::vector<PastWindow>& windows) {
  if (transitions.size() != windows.size()) throw ConfigurationError("one window per transition");
  const auto n = static_cast<Eigen::Index>(transitions.size());
  Eigen::MatrixXd states(model.state_dim(), n), actions(model.action_dim(), n);
  Eigen::MatrixXd window_inputs(model.window_input_width(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    states.col(i) = transitions[k].state;
    actions.col(i) = transitions[k].action;
    if (model.has_context()) window_inputs.col(i) = model.window_input(windows[k]);
  }
  const auto features = model.features_batch(model.normalized_inputs(states, actions));
  return MultiHeadDynamicsModel::head_inputs(features, model.encode_batch(window_inputs));
}

}  // namespace tmcl
