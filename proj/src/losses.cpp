#include "salgen/losses.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "salgen/ops.hpp"

namespace salgen {

namespace {

constexpr double kProbClamp = 1e-7;

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_finite(const char* op, const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite input");
  }
}

// Per-image sums over C,H,W -> [N].
Tensor image_sum(const Tensor& x) { return sum(x, {1, 2, 3}); }

Tensor ce_logits(const Tensor& s, const Tensor& y) { return softplus(s) - s * y; }

Tensor ce_prob(const Tensor& p, const Tensor& t) {
  Tensor pc = clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(t * log(pc) + (1.0 - t) * log(1.0 - pc));
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {lambda_adv, alpha_depth, beta_ssim, alpha_ss, lambda1, lambda2, lambda3}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
  if (beta_ssim > 1.0 || alpha_ss > 1.0) throw std::invalid_argument("beta_ssim and alpha_ss must lie in [0,1]");
}

Tensor edge_weight(const Tensor& y) {
  if (y.ndim() != 4) throw ShapeError("edge_weight", "expected NCHW mask");
  for (double v : y.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("edge_weight: mask must be binary");
  }
  NoGradGuard ng;
  Tensor yd = y.detach();
  return abs(avg_pool2d(yd, 31, 1, 15) - yd) * 5.0 + 1.0;
}

StructureParts structure_loss_parts(const Tensor& logits, const Tensor& y) {
  require_same("structure_loss", logits, y);
  require_finite("structure_loss", logits);
  Tensor w = edge_weight(y);
  Tensor bce = image_sum(w * ce_logits(logits, y)) / image_sum(w);
  Tensor p = sigmoid(logits);
  Tensor inter = image_sum(w * p * y);
  Tensor uni = image_sum(w * (p + y));
  Tensor iou = 1.0 - (inter + 1.0) / (uni - inter + 1.0);
  StructureParts out{mean(bce), mean(iou), Tensor()};
  out.total = out.bce + out.iou;
  return out;
}

Tensor structure_loss(const Tensor& logits, const Tensor& y) { return structure_loss_parts(logits, y).total; }

Tensor bce_logits(const Tensor& logits, const Tensor& target) {
  require_same("bce_logits", logits, target);
  return mean(ce_logits(logits, target));
}

Tensor bce_prob(const Tensor& p, const Tensor& target) {
  require_same("bce_prob", p, target);
  return mean(ce_prob(p, target));
}

Tensor masked_bce_prob(const Tensor& p, const Tensor& target, const Tensor& mask) {
  require_same("masked_bce_prob", p, target);
  require_same("masked_bce_prob", p, mask);
  double labeled = 0.0;
  for (double v : mask.data()) labeled += v;
  if (labeled <= 0.0) throw std::invalid_argument("masked_bce_prob: no labeled pixels");
  return sum(mask * ce_prob(p, target)) / labeled;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  require_same("l1_loss", a, b);
  return mean(abs(a - b));
}

Tensor dssim(const Tensor& a, const Tensor& b) {
  require_same("dssim", a, b);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Tensor mu_a = avg_pool2d(a, 3, 1, 0);
  Tensor mu_b = avg_pool2d(b, 3, 1, 0);
  Tensor var_a = avg_pool2d(square(a), 3, 1, 0) - square(mu_a);
  Tensor var_b = avg_pool2d(square(b), 3, 1, 0) - square(mu_b);
  Tensor cov = avg_pool2d(a * b, 3, 1, 0) - mu_a * mu_b;
  Tensor num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
  Tensor den = (square(mu_a) + square(mu_b) + c1) * (var_a + var_b + c2);
  return mean(clamp((1.0 - num / den) * 0.5, 0.0, 1.0));
}

DepthParts depth_loss(const Tensor& pred, const Tensor& gt, const LossWeights& w) {
  require_same("depth_loss", pred, gt);
  for (const Tensor* t : {&pred, &gt}) {
    for (double v : t->data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("depth_loss: inputs must lie in [0,1]");
    }
  }
  DepthParts d{dssim(pred, gt), l1_loss(pred, gt), Tensor()};
  d.total = w.alpha_depth * (w.beta_ssim * d.ssim + (1.0 - w.beta_ssim) * d.l1);
  return d;
}

Tensor adversarial_loss(const Tensor& d_fake) { return bce_prob(d_fake, Tensor::ones(d_fake.shape())); }

Tensor discriminator_loss(const Tensor& d_fake, const Tensor& d_real) {
  return bce_prob(d_fake, Tensor::zeros(d_fake.shape())) + bce_prob(d_real, Tensor::ones(d_real.shape()));
}

GanParts gan_losses(const Tensor& logits, const Tensor& y, const Tensor& d_fake, const Tensor& d_fake_detached,
                    const Tensor& d_real, const LossWeights& w) {
  GanParts g;
  g.rec = structure_loss(logits, y);
  g.adv = adversarial_loss(d_fake);
  g.gen = g.rec + w.lambda_adv * g.adv;
  g.dis = discriminator_loss(d_fake_detached, d_real);
  return g;
}

Tensor kl_diag_gaussian(const Tensor& mu_q, const Tensor& logvar_q, const Tensor& mu_p, const Tensor& logvar_p) {
  require_same("kl_diag_gaussian", mu_q, logvar_q);
  require_same("kl_diag_gaussian", mu_q, mu_p);
  require_same("kl_diag_gaussian", mu_q, logvar_p);
  if (mu_q.ndim() != 2) throw ShapeError("kl_diag_gaussian", "expected [N,K]");
  Tensor t = logvar_p - logvar_q + (exp(logvar_q) + square(mu_q - mu_p)) / exp(logvar_p) - 1.0;
  return mean(sum(t, {1})) * 0.5;
}

CvaeParts cvae_loss(const Tensor& logits, const Tensor& y, const Tensor& mu_q, const Tensor& logvar_q,
                    const Tensor& mu_p, const Tensor& logvar_p) {
  CvaeParts c{structure_loss(logits, y), kl_diag_gaussian(mu_q, logvar_q, mu_p, logvar_p), Tensor()};
  c.total = c.rec + c.kl;
  return c;
}

Tensor partial_ce(const Tensor& logits, const Scribble& scribble) {
  require_same("partial_ce", logits, scribble.target);
  require_same("partial_ce", logits, scribble.mask);
  double labeled = 0.0;
  for (double v : scribble.mask.data()) labeled += v;
  if (labeled <= 0.0) throw std::invalid_argument("partial_ce: scribble has no labeled pixels");
  return sum(scribble.mask * ce_logits(logits, scribble.target)) / labeled;
}

Tensor to_gray(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("to_gray", "expected NCHW image");
  if (x.dim(1) == 1) return x;
  if (x.dim(1) != 3) throw ShapeError("to_gray", "expected 1 or 3 channels");
  return slice(x, 1, 0, 1) * 0.299 + slice(x, 1, 1, 2) * 0.587 + slice(x, 1, 2, 3) * 0.114;
}

Tensor smoothness_loss(const Tensor& s, const Tensor& x) {
  if (s.ndim() != 4 || x.ndim() != 4 || s.dim(0) != x.dim(0) || s.dim(2) != x.dim(2) || s.dim(3) != x.dim(3)) {
    throw ShapeError("smoothness_loss", shape_str(s.shape()) + " vs " + shape_str(x.shape()));
  }
  constexpr double c = 10.0;
  Tensor gray = to_gray(x.detach());
  std::int64_t h = s.dim(2), w = s.dim(3);
  auto diff = [](const Tensor& t, int axis, std::int64_t n) {
    return slice(t, axis, 1, n) - slice(t, axis, 0, n - 1);
  };
  Tensor lx = mean(abs(diff(s, 3, w)) * exp(abs(diff(gray, 3, w)) * -c));
  Tensor ly = mean(abs(diff(s, 2, h)) * exp(abs(diff(gray, 2, h)) * -c));
  return lx + ly;
}

Tensor gated_crf_loss(const Tensor& s, const Tensor& x, const Tensor& valid, GatedCrfConfig cfg) {
  if (s.ndim() != 4 || s.dim(1) != 1) throw ShapeError("gated_crf_loss", "s must be [N,1,H,W]");
  if (x.ndim() != 4 || x.dim(0) != s.dim(0) || x.dim(2) != s.dim(2) || x.dim(3) != s.dim(3)) {
    throw ShapeError("gated_crf_loss", shape_str(s.shape()) + " vs image " + shape_str(x.shape()));
  }
  if (valid.defined()) require_same("gated_crf_loss", s, valid);
  if (cfg.radius < 1 || cfg.sigma_p <= 0 || cfg.sigma_c <= 0) throw std::invalid_argument("gated_crf_loss: bad config");

  struct Geometry {
    std::int64_t n, c, h, w;
    int r;
    double ip, ic;
    std::vector<double> img, valid;
  };
  auto g = std::make_shared<Geometry>();
  g->n = s.dim(0);
  g->c = x.dim(1);
  g->h = s.dim(2);
  g->w = s.dim(3);
  g->r = cfg.radius;
  g->ip = 1.0 / (2.0 * cfg.sigma_p * cfg.sigma_p);
  g->ic = 1.0 / (2.0 * cfg.sigma_c * cfg.sigma_c);
  g->img = x.to_vector();
  g->valid = valid.defined() ? valid.to_vector() : std::vector<double>(static_cast<std::size_t>(s.numel()), 1.0);

  // Visits every ordered valid pair of image n: fn(i, j, weight).
  auto visit = [g](std::int64_t n, auto&& fn) {
    std::int64_t hw = g->h * g->w;
    const double* img = g->img.data() + n * g->c * hw;
    const double* val = g->valid.data() + n * hw;
    for (std::int64_t y = 0; y < g->h; ++y) {
      for (std::int64_t xx = 0; xx < g->w; ++xx) {
        std::int64_t i = y * g->w + xx;
        if (val[i] == 0.0) continue;
        for (int dy = -g->r; dy <= g->r; ++dy) {
          std::int64_t yj = y + dy;
          if (yj < 0 || yj >= g->h) continue;
          for (int dx = -g->r; dx <= g->r; ++dx) {
            std::int64_t xj = xx + dx;
            if ((dy == 0 && dx == 0) || xj < 0 || xj >= g->w) continue;
            std::int64_t j = yj * g->w + xj;
            if (val[j] == 0.0) continue;
            double dc = 0.0;
            for (std::int64_t ch = 0; ch < g->c; ++ch) {
              double d = img[ch * hw + i] - img[ch * hw + j];
              dc += d * d;
            }
            fn(i, j, std::exp(-(dy * dy + dx * dx) * g->ip - dc * g->ic));
          }
        }
      }
    }
  };

  auto sv = s.data();
  std::int64_t hw = g->h * g->w;
  auto counts = std::make_shared<std::vector<double>>(static_cast<std::size_t>(g->n), 0.0);
  double total = 0.0;
  for (std::int64_t n = 0; n < g->n; ++n) {
    const double* sn = sv.data() + n * hw;
    double acc = 0.0, cnt = 0.0;
    visit(n, [&](std::int64_t i, std::int64_t j, double wij) {
      acc += wij * std::abs(sn[i] - sn[j]);
      cnt += 1.0;
    });
    (*counts)[n] = cnt;
    if (cnt > 0) total += acc / cnt;
  }
  total /= static_cast<double>(g->n);
  return detail::make_result("gated_crf", {}, {total}, {s}, [g, counts, visit, hw](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& gs = in.grad_buffer();
    double up = self.grad[0] / static_cast<double>(g->n);
    for (std::int64_t n = 0; n < g->n; ++n) {
      double cnt = (*counts)[n];
      if (cnt == 0) continue;
      double scale = up / cnt;
      const double* sn = in.value.data() + n * hw;
      double* gn = gs.data() + n * hw;
      visit(n, [&](std::int64_t i, std::int64_t j, double wij) {
        double d = sn[i] - sn[j];
        double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        gn[i] += scale * wij * sg;
        gn[j] -= scale * wij * sg;
      });
    }
  });
}

Tensor rotation_consistency_loss(const Tensor& rotated_logits, const Tensor& logits, int k, double alpha) {
  Tensor s = sigmoid(rotated_logits);
  Tensor st = rot90(sigmoid(logits), k);
  require_same("rotation_consistency_loss", s, st);
  return alpha * dssim(s, st) + (1.0 - alpha) * l1_loss(s, st);
}

Tensor rotation_consistency_loss(const std::function<Tensor(const Tensor&)>& model, const Tensor& x, int k,
                                 double alpha) {
  if (x.dim(2) != x.dim(3)) throw ShapeError("rotation_consistency_loss", "input must be square");
  return rotation_consistency_loss(model(rot90(x, k)), model(x), k, alpha);
}

WeakParts weak_loss(const Tensor& logits, const Tensor& rotated_logits, int k, const Tensor& x,
                    const Scribble& scribble, const LossWeights& w, GatedCrfConfig crf) {
  WeakParts p;
  Tensor s = sigmoid(logits);
  p.pce = partial_ce(logits, scribble);
  p.smooth = smoothness_loss(s, x);
  p.gcrf = gated_crf_loss(s, x, Tensor(), crf);
  p.ss = rotation_consistency_loss(rotated_logits, logits, k, w.alpha_ss);
  p.total = p.pce + w.lambda1 * p.smooth + w.lambda2 * p.gcrf + w.lambda3 * p.ss;
  return p;
}

}  // namespace salgen
