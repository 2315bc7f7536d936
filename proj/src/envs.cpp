#include "tmcl/envs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "tmcl/errors.hpp"
#include "tmcl/rng.hpp"

namespace tmcl {

namespace {

std::atomic<std::uint64_t> g_parameter_reads{0};

double clip(double v, double lo, double hi) { return std::clamp(v, lo, hi); }

}  // namespace

std::string to_string(EnvFamily f) {
  switch (f) {
    case EnvFamily::Pendulum: return "pendulum";
    case EnvFamily::CartPoleSwingUp: return "cartpole_swingup";
    case EnvFamily::ToyModes: return "toymodes";
  }
  return "unknown";
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

EnvFamily env_family_from_string(const std::string& s) {
  if (s == "pendulum") return EnvFamily::Pendulum;
  if (s == "cartpole_swingup" || s == "cartpole") return EnvFamily::CartPoleSwingUp;
  if (s == "toymodes") return EnvFamily::ToyModes;
  throw ConfigurationError("unknown environment family '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigurationError("unknown split '" + s + "' (expected train or test)");
}

std::vector<double> parameter_set(EnvFamily family, Split split) {
  const bool train = split == Split::Train;
  switch (family) {
    case EnvFamily::Pendulum:
      return train ? std::vector<double>{0.5, 0.75, 1.0, 1.25}
                   : std::vector<double>{0.25, 0.375, 1.5, 1.75};
    case EnvFamily::CartPoleSwingUp:
      return train ? std::vector<double>{0.25, 0.5, 1.5, 2.5}
                   : std::vector<double>{0.1, 0.15, 2.75, 3.0};
    case EnvFamily::ToyModes:
      return {0.0, 1.0};
  }
  return {};
}

EnvContext::EnvContext(EnvFamily family, std::vector<double> parameters, Split split)
    : family_(family), parameters_(std::move(parameters)), split_(split) {
  const std::size_t expected = family == EnvFamily::CartPoleSwingUp ? 2 : 1;
  if (parameters_.size() != expected) {
    throw ConfigurationError(to_string(family) + " expects " + std::to_string(expected) +
                             " context parameter(s)");
  }
  if (family == EnvFamily::ToyModes && parameters_[0] != 0.0 && parameters_[0] != 1.0) {
    throw ConfigurationError("toymodes mode must be 0 or 1");
  }
  for (double p : parameters_) {
    if (!std::isfinite(p) || (family != EnvFamily::ToyModes && p <= 0.0)) {
      throw ConfigurationError("physical context parameters must be positive");
    }
  }
}

const std::vector<double>& EnvContext::parameters() const {
  g_parameter_reads.fetch_add(1, std::memory_order_relaxed);
  return parameters_;
}

double EnvContext::label() const {
  g_parameter_reads.fetch_add(1, std::memory_order_relaxed);
  return parameters_.front();
}

std::uint64_t EnvContext::parameter_reads() { return g_parameter_reads.load(); }
void EnvContext::reset_parameter_reads() { g_parameter_reads.store(0); }

EnvContext sample_context(EnvFamily family, Split split, Rng& rng) {
  const auto values = parameter_set(family, split);
  return sample_context(family, values, split, rng);
}

EnvContext sample_context(EnvFamily family, std::span<const double> values, Split split, Rng& rng) {
  if (values.empty()) throw ConfigurationError("empty parameter set");
  const double v = values[rng.index(values.size())];
  if (family == EnvFamily::CartPoleSwingUp) return EnvContext(family, {v, v}, split);
  return EnvContext(family, {v}, split);
}

double pendulum_reward(std::span<const double> obs, std::span<const double> action) {
  const double theta = std::atan2(obs[1], obs[0]);
  const double u = clip(action[0], -2.0, 2.0);
  return -(theta * theta + 0.1 * obs[2] * obs[2] + 0.001 * u * u);
}

double cartpole_swingup_reward(std::span<const double> obs, std::span<const double>) {
  return obs[2];
}

double toymodes_reward(std::span<const double> obs, std::span<const double>) {
  return -(obs[0] * obs[0] + obs[1] * obs[1]);
}

RewardFn reward_function(EnvFamily family) {
  switch (family) {
    case EnvFamily::Pendulum: return pendulum_reward;
    case EnvFamily::CartPoleSwingUp: return cartpole_swingup_reward;
    case EnvFamily::ToyModes: return toymodes_reward;
  }
  throw ConfigurationError("unknown family");
}

EnvSpec env_spec(EnvFamily family) {
  switch (family) {
    case EnvFamily::Pendulum:
      return {family, 3, 1, PendulumConstants{}.episode_length, Eigen::VectorXd::Constant(1, -2.0),
              Eigen::VectorXd::Constant(1, 2.0)};
    case EnvFamily::CartPoleSwingUp:
      return {family, 5, 1, CartPoleConstants{}.episode_length, Eigen::VectorXd::Constant(1, -1.0),
              Eigen::VectorXd::Constant(1, 1.0)};
    case EnvFamily::ToyModes:
      return {family, 2, 2, ToyModesConstants{}.episode_length, Eigen::VectorXd::Constant(2, -1.0),
              Eigen::VectorXd::Constant(2, 1.0)};
  }
  throw ConfigurationError("unknown family");
}

double wrap_angle(double theta) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta + std::numbers::pi, two_pi);
  if (w < 0) w += two_pi;
  w -= std::numbers::pi;
  // fmod maps pi to -pi; the range is (-pi, pi].
  return w == -std::numbers::pi ? std::numbers::pi : w;
}

PendulumStep pendulum_step(const PendulumState& s, double torque, double length,
                           const PendulumConstants& c) {
  const double u = clip(torque, -c.max_torque, c.max_torque);
  const double th = wrap_angle(s.theta);
  const double reward = -(th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * u * u);
  const double accel = 3.0 * c.gravity / (2.0 * length) * std::sin(s.theta) +
                       3.0 / (c.mass * length * length) * u;
  PendulumState next;
  next.theta_dot = clip(s.theta_dot + c.dt * accel, -c.max_speed, c.max_speed);
  next.theta = s.theta + c.dt * next.theta_dot;
  return {next, reward};
}

Eigen::VectorXd pendulum_observation(const PendulumState& s) {
  Eigen::VectorXd obs(3);
  obs << std::cos(s.theta), std::sin(s.theta), s.theta_dot;
  return obs;
}

CartPoleAccelerations cartpole_accelerations(const CartPoleState& s, double force, double cart_mass,
                                             double pole_mass, const CartPoleConstants& c) {
  const double sin_t = std::sin(s.theta);
  const double cos_t = std::cos(s.theta);
  const double mpl = pole_mass * c.pole_length;
  const double total = cart_mass + pole_mass;
  const double w2 = s.theta_dot * s.theta_dot;
  const double x_ddot = (-2.0 * mpl * w2 * sin_t + 3.0 * pole_mass * c.gravity * sin_t * cos_t +
                         4.0 * force - 4.0 * c.friction * s.x_dot) /
                        (4.0 * total - 3.0 * pole_mass * cos_t * cos_t);
  const double theta_ddot =
      (-3.0 * mpl * w2 * sin_t * cos_t + 6.0 * total * c.gravity * sin_t +
       6.0 * (force - c.friction * s.x_dot) * cos_t) /
      (4.0 * c.pole_length * total - 3.0 * mpl * cos_t * cos_t);
  return {x_ddot, theta_ddot};
}

CartPoleStep cartpole_swingup_step(const CartPoleState& s, double action, double cart_mass,
                                   double pole_mass, const CartPoleConstants& c) {
  const double force = c.force_mag * clip(action, -1.0, 1.0);
  const double reward = std::cos(s.theta);
  const auto acc = cartpole_accelerations(s, force, cart_mass, pole_mass, c);
  CartPoleState n;
  n.x = s.x + c.dt * s.x_dot;
  n.theta = s.theta + c.dt * s.theta_dot;
  n.x_dot = s.x_dot + c.dt * acc.x_ddot;
  n.theta_dot = clip(s.theta_dot + c.dt * acc.theta_ddot, -c.max_angular_speed, c.max_angular_speed);
  if (std::abs(n.x) > c.x_limit) {
    n.x = std::copysign(c.x_limit, n.x);
    n.x_dot = 0.0;
  }
  return {n, reward};
}

Eigen::VectorXd cartpole_observation(const CartPoleState& s) {
  Eigen::VectorXd obs(5);
  obs << s.x, s.x_dot, std::cos(s.theta), std::sin(s.theta), s.theta_dot;
  return obs;
}

ToyModeMatrices toymodes_matrices(int mode) {
  ToyModeMatrices m;
  if (mode == 0) {
    m.a << 0.9, 0.0, 0.0, 0.9;
    m.b = 0.5 * Eigen::Matrix2d::Identity();
  } else if (mode == 1) {
    m.a << 0.9, 0.5, 0.0, 0.9;
    m.b = -0.5 * Eigen::Matrix2d::Identity();
  } else {
    throw ConfigurationError("toymodes mode must be 0 or 1");
  }
  return m;
}

ToyModesStep toymodes_step(const Eigen::Vector2d& s, const Eigen::Vector2d& action, int mode,
                           const Eigen::Vector2d& noise) {
  const auto m = toymodes_matrices(mode);
  const Eigen::Vector2d a = action.cwiseMax(-1.0).cwiseMin(1.0);
  return {m.a * s + m.b * a + noise, -s.squaredNorm()};
}

class PendulumEnv final : public Environment {
 public:
  explicit PendulumEnv(const EnvContext& ctx)
      : spec_(env_spec(EnvFamily::Pendulum)), length_(ctx.parameters_[0]) {}

  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(Rng& rng) override {
    state_.theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
    state_.theta_dot = rng.uniform(-1.0, 1.0);
    return observation();
  }

  StepResult step(const Eigen::VectorXd& action) override {
    const auto r = pendulum_step(state_, action[0], length_);
    state_ = r.next;
    return {observation(), r.reward};
  }

  Eigen::VectorXd observation() const override { return pendulum_observation(state_); }

 private:
  EnvSpec spec_;
  double length_;
  PendulumState state_;
};

class CartPoleSwingUpEnv final : public Environment {
 public:
  explicit CartPoleSwingUpEnv(const EnvContext& ctx)
      : spec_(env_spec(EnvFamily::CartPoleSwingUp)),
        cart_mass_(ctx.parameters_[0]),
        pole_mass_(ctx.parameters_[1]) {}

  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(Rng& rng) override {
    state_.x = 0.2 * rng.normal();
    state_.x_dot = 0.2 * rng.normal();
    state_.theta = std::numbers::pi + 0.2 * rng.normal();
    state_.theta_dot = 0.2 * rng.normal();
    return observation();
  }

  StepResult step(const Eigen::VectorXd& action) override {
    const auto r = cartpole_swingup_step(state_, action[0], cart_mass_, pole_mass_);
    state_ = r.next;
    return {observation(), r.reward};
  }

  Eigen::VectorXd observation() const override { return cartpole_observation(state_); }

 private:
  EnvSpec spec_;
  double cart_mass_;
  double pole_mass_;
  CartPoleState state_;
};

class ToyModesEnv final : public Environment {
 public:
  ToyModesEnv(const EnvContext& ctx, const ToyModesConstants& constants)
      : spec_(env_spec(EnvFamily::ToyModes)),
        mode_(static_cast<int>(ctx.parameters_[0])),
        constants_(constants) {
    spec_.episode_length = constants.episode_length;
  }

  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(Rng& rng) override {
    state_ << rng.uniform(-constants_.init_range, constants_.init_range),
        rng.uniform(-constants_.init_range, constants_.init_range);
    noise_ = rng.fork(0x70157);
    return observation();
  }

  StepResult step(const Eigen::VectorXd& action) override {
    Eigen::Vector2d noise = Eigen::Vector2d::Zero();
    if (constants_.noise_std > 0) {
      noise << constants_.noise_std * noise_.normal(), constants_.noise_std * noise_.normal();
    }
    const auto r = toymodes_step(state_, Eigen::Vector2d(action[0], action[1]), mode_, noise);
    state_ = r.next;
    return {observation(), r.reward};
  }

  Eigen::VectorXd observation() const override { return state_; }

 private:
  EnvSpec spec_;
  int mode_;
  ToyModesConstants constants_;
  Eigen::Vector2d state_ = Eigen::Vector2d::Zero();
  Rng noise_{0};
};

std::unique_ptr<Environment> make_environment(const EnvContext& context, const EnvOptions& options) {
  switch (context.family()) {
    case EnvFamily::Pendulum: return std::make_unique<PendulumEnv>(context);
    case EnvFamily::CartPoleSwingUp: return std::make_unique<CartPoleSwingUpEnv>(context);
    case EnvFamily::ToyModes: return std::make_unique<ToyModesEnv>(context, options.toy);
  }
  throw ConfigurationError("unknown family");
}

}  // namespace tmcl
