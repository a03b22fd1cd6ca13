#pragma once

#include <cmath>

#include "salgen/nets.hpp"
#include "salgen/ops.hpp"
#include "salgen/rng.hpp"

namespace testutil {

inline salgen::NetConfig tiny_net(int image = 16) {
  salgen::NetConfig n;
  auto& e = n.encoder;
  e.image_size = image;
  e.patch_size = image / 8;
  e.window_size = 2;
  e.depths = {2, 2, 1, 1};
  e.num_heads = {1, 2, 2, 2};
  e.stage_channels = {4, 8, 16, 32};
  n.decoder.channels = 4;
  n.decoder.reduction = 2;
  n.cvae_hidden = 8;
  n.disc_channels = 4;
  return n;
}

/// sum(w * t) with fixed Gaussian weights.
inline salgen::Tensor proj(const salgen::Tensor& t, std::uint64_t seed) {
  salgen::Rng r(seed);
  return salgen::sum(t * r.randn(t.shape()));
}

inline salgen::Tensor binary(salgen::Rng& r, salgen::Shape s, double p = 0.5) {
  salgen::Tensor t = r.rand(std::move(s));
  for (auto& v : t.mutable_data()) v = v < p ? 1.0 : 0.0;
  return t;
}

inline double max_abs_diff(const salgen::Tensor& a, const salgen::Tensor& b) {
  double m = 0;
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

inline bool bit_equal(const salgen::Tensor& a, const salgen::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data(), y = b.data();
  return std::equal(x.begin(), x.end(), y.begin());
}

}  // namespace testutil
