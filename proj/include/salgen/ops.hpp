#pragma once

// Differentiable primitives. Every function returns a new tensor; inputs are
// never modified. Layout conventions: images are NCHW, token grids NHWC.

#include <vector>

#include "salgen/tensor.hpp"

namespace salgen {

// Elementwise binary ops broadcast numpy-style.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor rsub(double a, const Tensor& b);  // a - b

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator+(double a, const Tensor& b) { return add(b, a); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator-(double a, const Tensor& b) { return rsub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, double b) { return mul(a, 1.0 / b); }
Tensor operator-(const Tensor& a);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.2);
Tensor gelu(const Tensor& x);
/// log(1 + exp(x)), computed without overflow.
Tensor softplus(const Tensor& x);
/// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::vector<int> axes, bool keepdim = false);
Tensor mean(const Tensor& x, std::vector<int> axes, bool keepdim = false);

/// [..., M, K] x [..., K, N]. The right operand is either 2-D (shared across
/// the batch) or has batch dimensions identical to the left operand.
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

/// x [N,C,H,W], weight [O,C,kh,kw], bias [O] or undefined. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

/// Zero-padded average pooling; padded cells count toward the divisor.
Tensor avg_pool2d(const Tensor& x, int kernel, int stride, int padding);
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding = 0);
/// [N,C,H,W] -> [N,C,1,1]
Tensor global_avg_pool(const Tensor& x);

/// Bilinear resize of NCHW maps (half-pixel centers, edge clamped).
Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

Tensor softmax(const Tensor& x, int axis);
/// Normalizes the last axis; gamma and beta have the size of that axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
/// Cyclic shift: element i moves to (i + shift) mod n along each axis.
Tensor roll(const Tensor& x, const std::vector<std::int64_t>& shifts, const std::vector<int>& axes);
/// Counter-clockwise rotation of the last two axes by k * 90 degrees.
Tensor rot90(const Tensor& x, int k);

}  // namespace salgen
