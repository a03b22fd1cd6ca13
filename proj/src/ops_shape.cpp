#include <algorithm>
#include <cmath>
#include <numeric>

#include "salgen/ops.hpp"

namespace salgen {

namespace {

using detail::Node;

int normalize_axis(const char* op, int axis, int ndim) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw ShapeError(op, "axis out of range");
  return axis;
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Gathers out[i] = in[src[i]]; backward scatters.
Tensor gather(const char* op, const Tensor& x, Shape out_shape, std::shared_ptr<std::vector<std::int64_t>> src) {
  auto xv = x.data();
  std::vector<double> out(src->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*src)[i]];
  return detail::make_result(op, std::move(out_shape), std::move(out), {x}, [src](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gi[(*src)[i]] += self.grad[i];
  });
}

// Splits a shape around one axis into (outer, length, inner).
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor sum(const Tensor& x) {
  auto xv = x.data();
  double total = 0.0;
  for (double v : xv) total += v;
  return detail::make_result("sum", {1}, {total}, {x}, [](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    double g = self.grad[0];
    for (auto& v : gi) v += g;
  });
}

Tensor mean(const Tensor& x) {
  auto n = static_cast<double>(x.numel());
  return mul(sum(x), 1.0 / n);
}

Tensor sum(const Tensor& x, std::vector<int> axes, bool keepdim) {
  const auto& s = x.shape();
  int nd = static_cast<int>(s.size());
  std::vector<bool> reduce(nd, false);
  for (int& a : axes) {
    a = normalize_axis("sum", a, nd);
    reduce[a] = true;
  }
  Shape kept(s);
  for (int i = 0; i < nd; ++i) {
    if (reduce[i]) kept[i] = 1;
  }
  // Map every input element to its output slot.
  auto kst = strides_of(kept);
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
  {
    std::vector<std::int64_t> counter(nd, 0);
    std::int64_t cur = 0;
    for (std::size_t f = 0; f < map->size(); ++f) {
      (*map)[f] = cur;
      for (int d = nd; d-- > 0;) {
        std::int64_t step = reduce[d] ? 0 : kst[d];
        if (++counter[d] < s[d]) {
          cur += step;
          break;
        }
        cur -= step * (s[d] - 1);
        counter[d] = 0;
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(shape_numel(kept)), 0.0);
  auto xv = x.data();
  for (std::size_t f = 0; f < map->size(); ++f) out[(*map)[f]] += xv[f];
  Shape out_shape;
  if (keepdim) {
    out_shape = kept;
  } else {
    for (int i = 0; i < nd; ++i) {
      if (!reduce[i]) out_shape.push_back(s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
  }
  return detail::make_result("sum_axes", std::move(out_shape), std::move(out), {x}, [map](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t f = 0; f < map->size(); ++f) gi[f] += self.grad[(*map)[f]];
  });
}

Tensor mean(const Tensor& x, std::vector<int> axes, bool keepdim) {
  const auto& s = x.shape();
  double count = 1.0;
  for (int a : axes) count *= static_cast<double>(s[normalize_axis("mean", a, static_cast<int>(s.size()))]);
  return mul(sum(x, std::move(axes), keepdim), 1.0 / count);
}

Tensor softmax(const Tensor& x, int axis) {
  const auto& s = x.shape();
  axis = normalize_axis("softmax", axis, static_cast<int>(s.size()));
  auto sp = split_at(s, axis);
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      std::int64_t base = o * sp.len * sp.inner + i;
      double mx = -INFINITY;
      for (std::int64_t k = 0; k < sp.len; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double z = 0.0;
      for (std::int64_t k = 0; k < sp.len; ++k) {
        double e = std::exp(xv[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::int64_t k = 0; k < sp.len; ++k) out[base + k * sp.inner] /= z;
    }
  }
  return detail::make_result("softmax", s, std::move(out), {x}, [sp](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        std::int64_t base = o * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::int64_t k = 0; k < sp.len; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::int64_t k = 0; k < sp.len; ++k) {
          auto j = base + k * sp.inner;
          gi[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto& s = x.shape();
  std::int64_t d = s.back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm", "affine size mismatch for input " + shape_str(s));
  }
  std::int64_t rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::int64_t k = 0; k < d; ++k) mu += row[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t k = 0; k < d; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::int64_t k = 0; k < d; ++k) {
      double h = (row[k] - mu) * is;
      (*xhat)[r * d + k] = h;
      out[r * d + k] = h * gv[k] + bv[k];
    }
  }
  return detail::make_result("layer_norm", s, std::move(out), {x, gamma, beta}, [d, rows, xhat, inv_std](Node& self) {
    auto& in = *self.inputs[0];
    auto& gam = *self.inputs[1];
    auto& bet = *self.inputs[2];
    const auto& g = self.grad;
    if (gam.requires_grad || bet.requires_grad) {
      auto& gg = gam.grad_buffer();
      auto& gb = bet.grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t k = 0; k < d; ++k) {
          gg[k] += g[r * d + k] * (*xhat)[r * d + k];
          gb[k] += g[r * d + k];
        }
      }
    }
    if (in.requires_grad) {
      auto& gi = in.grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t k = 0; k < d; ++k) {
          double dy = g[r * d + k] * gam.value[k];
          s1 += dy;
          s2 += dy * (*xhat)[r * d + k];
        }
        double dd = static_cast<double>(d);
        for (std::int64_t k = 0; k < d; ++k) {
          double dy = g[r * d + k] * gam.value[k];
          gi[r * d + k] += (*inv_std)[r] * (dy - s1 / dd - (*xhat)[r * d + k] * s2 / dd);
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const auto& s0 = parts[0].shape();
  int nd = static_cast<int>(s0.size());
  axis = normalize_axis("concat", axis, nd);
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (static_cast<int>(s.size()) != nd) throw ShapeError("concat", "rank mismatch");
    for (int i = 0; i < nd; ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw ShapeError("concat", "shape " + shape_str(s) + " incompatible with " + shape_str(s0));
      }
    }
    out_shape[axis] += s[axis];
  }
  auto sp = split_at(out_shape, axis);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  auto offsets = std::make_shared<std::vector<std::int64_t>>();
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets->push_back(off);
    std::int64_t len = p.dim(axis);
    auto pv = p.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.data() + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * sp.len + off) * sp.inner);
    }
    off += len;
  }
  return detail::make_result("concat", out_shape, std::move(out), parts, [sp, offsets](Node& self) {
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      auto& in = *self.inputs[p];
      if (!in.requires_grad) continue;
      auto& gi = in.grad_buffer();
      std::int64_t len = static_cast<std::int64_t>(in.value.size()) / (sp.outer * sp.inner);
      std::int64_t o0 = (*offsets)[p];
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        const double* src = self.grad.data() + (o * sp.len + o0) * sp.inner;
        double* dst = gi.data() + o * len * sp.inner;
        for (std::int64_t k = 0; k < len * sp.inner; ++k) dst[k] += src[k];
      }
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end) {
  const auto& s = x.shape();
  axis = normalize_axis("slice", axis, static_cast<int>(s.size()));
  if (start < 0 || end > s[axis] || start > end) {
    throw ShapeError("slice", "range [" + std::to_string(start) + ", " + std::to_string(end) +
                                  ") invalid for axis of " + shape_str(s));
  }
  auto sp = split_at(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - start;
  std::int64_t len = end - start;
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(sp.outer * len * sp.inner));
  std::size_t f = 0;
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t k = 0; k < len; ++k) {
      for (std::int64_t i = 0; i < sp.inner; ++i) (*src)[f++] = (o * sp.len + start + k) * sp.inner + i;
    }
  }
  return gather("slice", x, std::move(out_shape), src);
}

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape", "more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) throw ShapeError("reshape", "cannot infer extent");
    shape[infer] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto xv = x.data();
  return detail::make_result("reshape", std::move(shape), {xv.begin(), xv.end()}, {x}, [](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const auto& s = x.shape();
  int nd = static_cast<int>(s.size());
  if (static_cast<int>(order.size()) != nd) throw ShapeError("permute", "order rank mismatch");
  std::vector<bool> seen(nd, false);
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) {
    int a = normalize_axis("permute", order[i], nd);
    if (seen[a]) throw ShapeError("permute", "repeated axis");
    seen[a] = true;
    out_shape[i] = s[a];
  }
  auto ist = strides_of(s);
  std::vector<std::int64_t> step(nd);
  for (int i = 0; i < nd; ++i) step[i] = ist[normalize_axis("permute", order[i], nd)];
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
  std::vector<std::int64_t> counter(nd, 0);
  std::int64_t cur = 0;
  for (std::size_t f = 0; f < src->size(); ++f) {
    (*src)[f] = cur;
    for (int d = nd; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        cur += step[d];
        break;
      }
      cur -= step[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  return gather("permute", x, std::move(out_shape), src);
}

Tensor roll(const Tensor& x, const std::vector<std::int64_t>& shifts, const std::vector<int>& axes) {
  if (shifts.size() != axes.size()) throw ShapeError("roll", "shifts/axes length mismatch");
  const auto& s = x.shape();
  int nd = static_cast<int>(s.size());
  std::vector<std::int64_t> shift(nd, 0);
  for (std::size_t i = 0; i < axes.size(); ++i) {
    int a = normalize_axis("roll", axes[i], nd);
    if (s[a] > 0) shift[a] = ((shifts[i] % s[a]) + s[a]) % s[a];
  }
  auto st = strides_of(s);
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
  std::vector<std::int64_t> counter(nd, 0);
  for (std::size_t f = 0; f < src->size(); ++f) {
    std::int64_t idx = 0;
    for (int d = 0; d < nd; ++d) {
      std::int64_t c = counter[d] - shift[d];
      if (c < 0) c += s[d];
      idx += c * st[d];
    }
    (*src)[f] = idx;
    for (int d = nd; d-- > 0;) {
      if (++counter[d] < s[d]) break;
      counter[d] = 0;
    }
  }
  return gather("roll", x, s, src);
}

Tensor rot90(const Tensor& x, int k) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("rot90", "needs at least two axes");
  k = ((k % 4) + 4) % 4;
  std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  std::int64_t lead = x.numel() / (h * w);
  Shape out_shape = s;
  if (k % 2 == 1) std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::int64_t oh = out_shape[s.size() - 2], ow = out_shape[s.size() - 1];
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
  for (std::int64_t l = 0; l < lead; ++l) {
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        std::int64_t si = 0, sj = 0;
        switch (k) {
          case 0: si = i; sj = j; break;
          case 1: si = j; sj = w - 1 - i; break;
          case 2: si = h - 1 - i; sj = w - 1 - j; break;
          default: si = h - 1 - j; sj = i; break;
        }
        (*src)[(l * oh + i) * ow + j] = (l * h + si) * w + sj;
      }
    }
  }
  return gather("rot90", x, std::move(out_shape), src);
}

}  // namespace salgen
