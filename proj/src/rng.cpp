#include "salgen/rng.hpp"

namespace salgen {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter) {
  return splitmix64(seed ^ splitmix64(counter + 0x632BE59BD9B4E019ULL));
}

Tensor Rng::randn(Shape shape, double stddev, bool requires_grad) {
  auto n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = stddev * normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Tensor Rng::rand(Shape shape, double lo, double hi, bool requires_grad) {
  auto n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace salgen
