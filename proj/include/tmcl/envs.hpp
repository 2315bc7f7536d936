#pragma once

// Parametric control environments whose transition dynamics depend on a
// hidden context: length-parameterized Pendulum, mass-parameterized
// CartPoleSwingUp and a two-mode linear toy system.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tmcl {

class Rng;

enum class EnvFamily { Pendulum, CartPoleSwingUp, ToyModes };
enum class Split { Train, Test };

std::string to_string(EnvFamily f);
std::string to_string(Split s);
EnvFamily env_family_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Discrete parameter values of a family's split.
std::vector<double> parameter_set(EnvFamily family, Split split);

/// Hidden environment parameter. Learners must never read it; every read of
/// the parameter goes through a process-wide counter so tests can assert that.
class EnvContext {
 public:
  EnvContext(EnvFamily family, std::vector<double> parameters, Split split);

  EnvFamily family() const { return family_; }
  Split split() const { return split_; }

  /// Counted read.
  const std::vector<double>& parameters() const;
  /// Counted read of the scalar used to label trajectories for diagnostics.
  double label() const;

  static std::uint64_t parameter_reads();
  static void reset_parameter_reads();

 private:
  friend class PendulumEnv;
  friend class CartPoleSwingUpEnv;
  friend class ToyModesEnv;

  EnvFamily family_;
  std::vector<double> parameters_;
  Split split_;
};

EnvContext sample_context(EnvFamily family, Split split, Rng& rng);
EnvContext sample_context(EnvFamily family, std::span<const double> values, Split split, Rng& rng);

/// Ground-truth reward r(s, a) on observations; pure, usable on imagined states.
using RewardFn = std::function<double(std::span<const double> state, std::span<const double> action)>;

double pendulum_reward(std::span<const double> observation, std::span<const double> action);
double cartpole_swingup_reward(std::span<const double> observation, std::span<const double> action);
double toymodes_reward(std::span<const double> observation, std::span<const double> action);
RewardFn reward_function(EnvFamily family);

/// Static shape information about a family.
struct EnvSpec {
  EnvFamily family;
  int state_dim;
  int action_dim;
  int episode_length;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
};
EnvSpec env_spec(EnvFamily family);

// --- Pendulum -------------------------------------------------------------

struct PendulumState {
  double theta = 0.0;  // 0 is upright
  double theta_dot = 0.0;
};

struct PendulumConstants {
  double dt = 0.05;
  double gravity = 10.0;
  double mass = 1.0;
  double max_speed = 8.0;
  double max_torque = 2.0;
  int episode_length = 200;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

struct PendulumStep {
  PendulumState next;
  double reward;
};
/// Semi-implicit Euler step; torque is clipped to +-max_torque.
PendulumStep pendulum_step(const PendulumState& s, double torque, double length,
                           const PendulumConstants& c = {});
Eigen::VectorXd pendulum_observation(const PendulumState& s);

// --- CartPoleSwingUp ------------------------------------------------------

struct CartPoleState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;  // 0 is upright, pi hanging
  double theta_dot = 0.0;
};

struct CartPoleConstants {
  double gravity = 9.82;
  double pole_length = 0.6;
  double force_mag = 10.0;
  double friction = 0.1;
  double dt = 0.01;
  double x_limit = 2.4;
  double max_angular_speed = 25.0;
  int episode_length = 500;
};

struct CartPoleAccelerations {
  double x_ddot;
  double theta_ddot;
};
CartPoleAccelerations cartpole_accelerations(const CartPoleState& s, double force, double cart_mass,
                                             double pole_mass, const CartPoleConstants& c = {});

struct CartPoleStep {
  CartPoleState next;
  double reward;
};
/// One Euler substep. `action` in [-1, 1] is clipped and scaled by force_mag.
CartPoleStep cartpole_swingup_step(const CartPoleState& s, double action, double cart_mass,
                                   double pole_mass, const CartPoleConstants& c = {});
Eigen::VectorXd cartpole_observation(const CartPoleState& s);

// --- Toy modes ------------------------------------------------------------

struct ToyModeMatrices {
  Eigen::Matrix2d a;
  Eigen::Matrix2d b;
};
/// Mode 0: A = diag(0.9, 0.9), B = 0.5 I. Mode 1: A = [[0.9, 0.5], [0, 0.9]], B = -0.5 I.
ToyModeMatrices toymodes_matrices(int mode);

struct ToyModesStep {
  Eigen::Vector2d next;
  double reward;
};
/// next = A_k s + B_k clip(a) + noise; reward = -|s|^2.
ToyModesStep toymodes_step(const Eigen::Vector2d& s, const Eigen::Vector2d& action, int mode,
                           const Eigen::Vector2d& noise = Eigen::Vector2d::Zero());

struct ToyModesConstants {
  double noise_std = 0.01;
  double init_range = 1.5;
  int episode_length = 50;
};

// --- Environment instances ------------------------------------------------

struct StepResult {
  Eigen::VectorXd observation;
  double reward;
};

struct EnvOptions {
  ToyModesConstants toy;
};

/// Single-owner mutable environment instance.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  /// Samples the initial state (deterministic given the rng state).
  virtual Eigen::VectorXd reset(Rng& rng) = 0;
  /// Actions outside the bounds are clipped, never rejected.
  virtual StepResult step(const Eigen::VectorXd& action) = 0;
  virtual Eigen::VectorXd observation() const = 0;
};

std::unique_ptr<Environment> make_environment(const EnvContext& context, const EnvOptions& options = {});

}  // namespace tmcl
