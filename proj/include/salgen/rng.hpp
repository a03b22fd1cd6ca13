#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "salgen/tensor.hpp"

namespace salgen {

/// Mixes a seed with a stream label so independent consumers (parameter
/// init, shuffling, latent draws) never share a sequence.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  /// Per-chain stream: seed = base ^ index.
  static Rng for_stream(std::uint64_t base, std::uint64_t index) { return Rng(base ^ index); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_inclusive) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi_inclusive)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }
  std::uint64_t seed() const { return seed_; }

  Tensor randn(Shape shape, double stddev = 1.0, bool requires_grad = false);
  Tensor rand(Shape shape, double lo = 0.0, double hi = 1.0, bool requires_grad = false);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::uint64_t seed_;
};

}  // namespace salgen
