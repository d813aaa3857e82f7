#pragma once

#include <cstdint>
#include <random>

#include "tssl/common.hpp"

namespace tssl {

/// Seeded pseudo-random stream. Every stochastic operation in the library
/// takes one of these (or a seed it derives one from); nothing reads global
/// state, so runs are reproducible and sweep cells are independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  /// Uniform integer in [0, n). Requires n >= 1.
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

  /// Independent child stream keyed on this rng's construction seed; the
  /// documented split rule (seed, tag, indices...) -> stream.
  template <typename... Parts>
  Rng split(Parts... parts) const {
    return Rng(seed_mix(seed_, parts...));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace tssl
