#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "salgen/ops.hpp"

namespace salgen {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// C (m x n) += op(A) * op(B), row-major storage.
void gemm_acc(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
              double* c) {
  MapC A(a, ta ? k : m, ta ? m : k);
  MapC B(b, tb ? n : k, tb ? k : n);
  Map C(c, m, n);
  if (precision() == Precision::f32) {
    RowMatF af = A.cast<float>();
    RowMatF bf = B.cast<float>();
    RowMatF cf(m, n);
    if (ta && tb) cf.noalias() = af.transpose() * bf.transpose();
    else if (ta) cf.noalias() = af.transpose() * bf;
    else if (tb) cf.noalias() = af * bf.transpose();
    else cf.noalias() = af * bf;
    C += cf.cast<double>();
    return;
  }
  if (ta && tb) C.noalias() += A.transpose() * B.transpose();
  else if (ta) C.noalias() += A.transpose() * B;
  else if (tb) C.noalias() += A * B.transpose();
  else C.noalias() += A * B;
}

struct ConvGeom {
  std::int64_t n, c, h, w, o, kh, kw, oh, ow;
  int stride, pad, dil;
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  std::int64_t hw = g.oh * g.ow;
  for (std::int64_t ci = 0; ci < g.c; ++ci) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * hw;
        for (std::int64_t y = 0; y < g.oh; ++y) {
          std::int64_t iy = y * g.stride - g.pad + ki * g.dil;
          double* dst = row + y * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = x + (ci * g.h + iy) * g.w;
          for (std::int64_t xx = 0; xx < g.ow; ++xx) {
            std::int64_t ix = xx * g.stride - g.pad + kj * g.dil;
            dst[xx] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* x) {
  std::int64_t hw = g.oh * g.ow;
  for (std::int64_t ci = 0; ci < g.c; ++ci) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * hw;
        for (std::int64_t y = 0; y < g.oh; ++y) {
          std::int64_t iy = y * g.stride - g.pad + ki * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = x + (ci * g.h + iy) * g.w;
          const double* src = row + y * g.ow;
          for (std::int64_t xx = 0; xx < g.ow; ++xx) {
            std::int64_t ix = xx * g.stride - g.pad + kj * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[xx];
          }
        }
      }
    }
  }
}

void require_nchw(const char* op, const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError(op, "expected NCHW input, got " + shape_str(x.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul", "operands need rank >= 2");
  std::int64_t m = sa[sa.size() - 2], k = sa.back();
  std::int64_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) throw ShapeError("matmul", "inner dims differ: " + shape_str(sa) + " x " + shape_str(sb));
  bool shared_b = sb.size() == 2;
  std::int64_t batch = a.numel() / (m * k);
  if (!shared_b) {
    if (!std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) {
      throw ShapeError("matmul", "batch dims differ: " + shape_str(sa) + " x " + shape_str(sb));
    }
  }
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(batch * m * n), 0.0);
  auto av = a.data();
  auto bv = b.data();
  if (shared_b) {
    gemm_acc(false, false, batch * m, n, k, av.data(), bv.data(), out.data());
  } else {
    for (std::int64_t i = 0; i < batch; ++i) {
      gemm_acc(false, false, m, n, k, av.data() + i * m * k, bv.data() + i * k * n, out.data() + i * m * n);
    }
  }
  return detail::make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                             [m, n, k, batch, shared_b](Node& self) {
                               auto& A = *self.inputs[0];
                               auto& B = *self.inputs[1];
                               const double* g = self.grad.data();
                               if (shared_b) {
                                 if (A.requires_grad) gemm_acc(false, true, batch * m, k, n, g, B.value.data(), A.grad_buffer().data());
                                 if (B.requires_grad) gemm_acc(true, false, k, n, batch * m, A.value.data(), g, B.grad_buffer().data());
                                 return;
                               }
                               for (std::int64_t i = 0; i < batch; ++i) {
                                 if (A.requires_grad) {
                                   gemm_acc(false, true, m, k, n, g + i * m * n, B.value.data() + i * k * n,
                                            A.grad_buffer().data() + i * m * k);
                                 }
                                 if (B.requires_grad) {
                                   gemm_acc(true, false, k, n, m, A.value.data() + i * m * k, g + i * m * n,
                                            B.grad_buffer().data() + i * k * n);
                                 }
                               }
                             });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  require_nchw("conv2d", x);
  if (weight.ndim() != 4) throw ShapeError("conv2d", "weight must be [O,C,kh,kw]");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[1] != xs[1]) {
    throw ShapeError("conv2d", "input channels " + std::to_string(xs[1]) + " vs weight " + shape_str(ws));
  }
  bool has_bias = bias.defined();
  if (has_bias && bias.numel() != ws[0]) throw ShapeError("conv2d", "bias size mismatch");
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0) throw ShapeError("conv2d", "invalid options");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, opt.stride, opt.padding, opt.dilation};
  g.oh = (g.h + 2 * g.pad - g.dil * (g.kh - 1) - 1) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.dil * (g.kw - 1) - 1) / g.stride + 1;
  if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d", "kernel larger than padded input " + shape_str(xs));
  std::int64_t ckk = g.c * g.kh * g.kw, hw = g.oh * g.ow;
  std::vector<double> out(static_cast<std::size_t>(g.n * g.o * hw), 0.0);
  std::vector<double> cols(static_cast<std::size_t>(ckk * hw));
  auto xv = x.data();
  auto wv = weight.data();
  for (std::int64_t i = 0; i < g.n; ++i) {
    im2col(xv.data() + i * g.c * g.h * g.w, g, cols.data());
    double* o = out.data() + i * g.o * hw;
    if (has_bias) {
      auto bv = bias.data();
      for (std::int64_t oc = 0; oc < g.o; ++oc) std::fill_n(o + oc * hw, hw, bv[oc]);
    }
    gemm_acc(false, false, g.o, hw, ckk, wv.data(), cols.data(), o);
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result("conv2d", {g.n, g.o, g.oh, g.ow}, std::move(out), std::move(inputs),
                             [g, ckk, hw, has_bias](Node& self) {
                               auto& X = *self.inputs[0];
                               auto& W = *self.inputs[1];
                               std::vector<double> cols(static_cast<std::size_t>(ckk * hw));
                               for (std::int64_t i = 0; i < g.n; ++i) {
                                 const double* go = self.grad.data() + i * g.o * hw;
                                 if (W.requires_grad) {
                                   im2col(X.value.data() + i * g.c * g.h * g.w, g, cols.data());
                                   gemm_acc(false, true, g.o, ckk, hw, go, cols.data(), W.grad_buffer().data());
                                 }
                                 if (X.requires_grad) {
                                   std::fill(cols.begin(), cols.end(), 0.0);
                                   gemm_acc(true, false, ckk, hw, g.o, W.value.data(), go, cols.data());
                                   col2im_add(cols.data(), g, X.grad_buffer().data() + i * g.c * g.h * g.w);
                                 }
                               }
                               if (has_bias && self.inputs[2]->requires_grad) {
                                 auto& gb = self.inputs[2]->grad_buffer();
                                 for (std::int64_t i = 0; i < g.n; ++i) {
                                   for (std::int64_t oc = 0; oc < g.o; ++oc) {
                                     const double* go = self.grad.data() + (i * g.o + oc) * hw;
                                     double acc = 0.0;
                                     for (std::int64_t p = 0; p < hw; ++p) acc += go[p];
                                     gb[oc] += acc;
                                   }
                                 }
                               }
                             });
}

Tensor avg_pool2d(const Tensor& x, int kernel, int stride, int padding) {
  require_nchw("avg_pool2d", x);
  const auto& s = x.shape();
  std::int64_t nc = s[0] * s[1], h = s[2], w = s[3];
  std::int64_t oh = (h + 2 * padding - kernel) / stride + 1;
  std::int64_t ow = (w + 2 * padding - kernel) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("avg_pool2d", "kernel larger than padded input");
  double inv = 1.0 / (static_cast<double>(kernel) * kernel);
  auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(nc * oh * ow));
  // Separable box sum: rows first, then columns.
  std::vector<double> tmp(static_cast<std::size_t>(h * ow));
  for (std::int64_t p = 0; p < nc; ++p) {
    const double* src = xv.data() + p * h * w;
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < ow; ++c) {
        std::int64_t c0 = std::max<std::int64_t>(c * stride - padding, 0);
        std::int64_t c1 = std::min<std::int64_t>(c * stride - padding + kernel, w);
        double acc = 0.0;
        for (std::int64_t j = c0; j < c1; ++j) acc += src[r * w + j];
        tmp[r * ow + c] = acc;
      }
    }
    double* dst = out.data() + p * oh * ow;
    for (std::int64_t r = 0; r < oh; ++r) {
      std::int64_t r0 = std::max<std::int64_t>(r * stride - padding, 0);
      std::int64_t r1 = std::min<std::int64_t>(r * stride - padding + kernel, h);
      for (std::int64_t c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (std::int64_t i = r0; i < r1; ++i) acc += tmp[i * ow + c];
        dst[r * ow + c] = acc * inv;
      }
    }
  }
  return detail::make_result("avg_pool2d", {s[0], s[1], oh, ow}, std::move(out), {x},
                             [nc, h, w, oh, ow, kernel, stride, padding, inv](Node& self) {
                               auto& gi = self.inputs[0]->grad_buffer();
                               std::vector<double> tmp(static_cast<std::size_t>(h * ow));
                               for (std::int64_t p = 0; p < nc; ++p) {
                                 const double* g = self.grad.data() + p * oh * ow;
                                 std::fill(tmp.begin(), tmp.end(), 0.0);
                                 for (std::int64_t r = 0; r < oh; ++r) {
                                   std::int64_t r0 = std::max<std::int64_t>(r * stride - padding, 0);
                                   std::int64_t r1 = std::min<std::int64_t>(r * stride - padding + kernel, h);
                                   for (std::int64_t i = r0; i < r1; ++i) {
                                     for (std::int64_t c = 0; c < ow; ++c) tmp[i * ow + c] += g[r * ow + c] * inv;
                                   }
                                 }
                                 double* dst = gi.data() + p * h * w;
                                 for (std::int64_t r = 0; r < h; ++r) {
                                   for (std::int64_t c = 0; c < ow; ++c) {
                                     std::int64_t c0 = std::max<std::int64_t>(c * stride - padding, 0);
                                     std::int64_t c1 = std::min<std::int64_t>(c * stride - padding + kernel, w);
                                     for (std::int64_t j = c0; j < c1; ++j) dst[r * w + j] += tmp[r * ow + c];
                                   }
                                 }
                               }
                             });
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding) {
  require_nchw("max_pool2d", x);
  const auto& s = x.shape();
  std::int64_t nc = s[0] * s[1], h = s[2], w = s[3];
  std::int64_t oh = (h + 2 * padding - kernel) / stride + 1;
  std::int64_t ow = (w + 2 * padding - kernel) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("max_pool2d", "kernel larger than padded input");
  auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(nc * oh * ow));
  auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
  for (std::int64_t p = 0; p < nc; ++p) {
    for (std::int64_t r = 0; r < oh; ++r) {
      for (std::int64_t c = 0; c < ow; ++c) {
        double best = -INFINITY;
        std::int64_t bi = -1;
        for (std::int64_t i = r * stride - padding; i < r * stride - padding + kernel; ++i) {
          if (i < 0 || i >= h) continue;
          for (std::int64_t j = c * stride - padding; j < c * stride - padding + kernel; ++j) {
            if (j < 0 || j >= w) continue;
            double v = xv[(p * h + i) * w + j];
            if (v > best) {
              best = v;
              bi = (p * h + i) * w + j;
            }
          }
        }
        auto o = (p * oh + r) * ow + c;
        out[o] = best;
        (*arg)[o] = bi;
      }
    }
  }
  return detail::make_result("max_pool2d", {s[0], s[1], oh, ow}, std::move(out), {x}, [arg](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < self.grad.size(); ++o) {
      if ((*arg)[o] >= 0) gi[(*arg)[o]] += self.grad[o];
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_nchw("global_avg_pool", x);
  return mean(x, {2, 3}, true);
}

Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_nchw("upsample_bilinear", x);
  const auto& s = x.shape();
  std::int64_t nc = s[0] * s[1], h = s[2], w = s[3];
  if (out_h <= 0 || out_w <= 0) throw ShapeError("upsample_bilinear", "invalid output size");
  struct Tap {
    std::int64_t i0, i1;
    double l1;
  };
  auto taps = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double src = std::max((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0);
      auto i0 = std::min(static_cast<std::int64_t>(src), in - 1);
      auto i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));
  auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(nc * out_h * out_w));
  for (std::int64_t p = 0; p < nc; ++p) {
    const double* src = xv.data() + p * h * w;
    for (std::int64_t r = 0; r < out_h; ++r) {
      const auto& a = (*ty)[r];
      for (std::int64_t c = 0; c < out_w; ++c) {
        const auto& b = (*tx)[c];
        double top = src[a.i0 * w + b.i0] * (1 - b.l1) + src[a.i0 * w + b.i1] * b.l1;
        double bot = src[a.i1 * w + b.i0] * (1 - b.l1) + src[a.i1 * w + b.i1] * b.l1;
        out[(p * out_h + r) * out_w + c] = top * (1 - a.l1) + bot * a.l1;
      }
    }
  }
  return detail::make_result("upsample_bilinear", {s[0], s[1], out_h, out_w}, std::move(out), {x},
                             [nc, h, w, out_h, out_w, ty, tx](Node& self) {
                               auto& gi = self.inputs[0]->grad_buffer();
                               for (std::int64_t p = 0; p < nc; ++p) {
                                 double* dst = gi.data() + p * h * w;
                                 for (std::int64_t r = 0; r < out_h; ++r) {
                                   const auto& a = (*ty)[r];
                                   for (std::int64_t c = 0; c < out_w; ++c) {
                                     const auto& b = (*tx)[c];
                                     double g = self.grad[(p * out_h + r) * out_w + c];
                                     dst[a.i0 * w + b.i0] += g * (1 - a.l1) * (1 - b.l1);
                                     dst[a.i0 * w + b.i1] += g * (1 - a.l1) * b.l1;
                                     dst[a.i1 * w + b.i0] += g * a.l1 * (1 - b.l1);
                                     dst[a.i1 * w + b.i1] += g * a.l1 * b.l1;
                                   }
                                 }
                               }
                             });
}

}  // namespace salgen
