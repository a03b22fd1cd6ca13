#include <algorithm>
#include <cmath>

#include "salgen/ops.hpp"

namespace salgen {

namespace {

using detail::Node;

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  std::size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    std::int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
    if (da == 0 || db == 0) out[i] = 0;
  }
  return out;
}

// Flat source index for every output element of a broadcast.
std::vector<std::int64_t> broadcast_index(const Shape& src, const Shape& out) {
  std::size_t n = out.size();
  std::vector<std::int64_t> stride(n, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < src.size(); ++k) {
    std::size_t i = src.size() - 1 - k;
    std::size_t o = n - 1 - k;
    stride[o] = src[i] == 1 ? 0 : s;
    s *= src[i];
  }
  std::int64_t total = shape_numel(out);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(total));
  std::vector<std::int64_t> counter(n, 0);
  std::int64_t cur = 0;
  for (std::int64_t f = 0; f < total; ++f) {
    idx[static_cast<std::size_t>(f)] = cur;
    for (std::size_t d = n; d-- > 0;) {
      if (++counter[d] < out[d]) {
        cur += stride[d];
        break;
      }
      cur -= stride[d] * (out[d] - 1);
      counter[d] = 0;
    }
  }
  return idx;
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto av = a.data();
  auto bv = b.data();
  if (sa == sb) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return detail::make_result(op, sa, std::move(out), {a, b}, [da, db](Node& self) {
      auto& in_a = *self.inputs[0];
      auto& in_b = *self.inputs[1];
      const auto& g = self.grad;
      if (in_a.requires_grad) {
        auto& ga = in_a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(in_a.value[i], in_b.value[i], self.value[i]);
      }
      if (in_b.requires_grad) {
        auto& gb = in_b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(in_a.value[i], in_b.value[i], self.value[i]);
      }
    });
  }
  Shape so = broadcast_shape(op, sa, sb);
  auto ia = std::make_shared<std::vector<std::int64_t>>(broadcast_index(sa, so));
  auto ib = std::make_shared<std::vector<std::int64_t>>(broadcast_index(sb, so));
  std::vector<double> out(ia->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[(*ia)[i]], bv[(*ib)[i]]);
  return detail::make_result(op, so, std::move(out), {a, b}, [da, db, ia, ib](Node& self) {
    auto& in_a = *self.inputs[0];
    auto& in_b = *self.inputs[1];
    const auto& g = self.grad;
    if (in_a.requires_grad) {
      auto& ga = in_a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto ja = (*ia)[i];
        ga[ja] += g[i] * da(in_a.value[ja], in_b.value[(*ib)[i]], self.value[i]);
      }
    }
    if (in_b.requires_grad) {
      auto& gb = in_b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto jb = (*ib)[i];
        gb[jb] += g[i] * db(in_a.value[(*ia)[i]], in_b.value[jb], self.value[i]);
      }
    }
  });
}

// df(x, y) receives the input and the forward output.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return detail::make_result(op, x.shape(), std::move(out), {x}, [df](Node& self) {
    auto& in = *self.inputs[0];
    auto& gi = in.grad_buffer();
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * df(in.value[i], self.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor add(const Tensor& a, double b) {
  return unary(
      "add_scalar", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(
      "mul_scalar", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor rsub(double a, const Tensor& b) {
  return unary(
      "rsub_scalar", b, [a](double x) { return a - x; }, [](double, double) { return -1.0; });
}

Tensor operator-(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary(
      "pow", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  return unary(
      "leaky_relu", x, [negative_slope](double v) { return v > 0 ? v : negative_slope * v; },
      [negative_slope](double v, double) { return v > 0 ? 1.0 : negative_slope; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

}  // namespace salgen
