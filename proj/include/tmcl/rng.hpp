#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tmcl {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Deterministic child seed for (master, component name, index). Used to give
/// every component (env, init, planner, segment sampling) its own stream.
std::uint64_t derive_seed(std::uint64_t master, std::string_view component, std::uint64_t index = 0);

/// mt19937_64 with platform-independent uniform/normal/index draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller).
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);

  /// Independent generator keyed on this one's next output and `stream`.
  Rng fork(std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace tmcl
