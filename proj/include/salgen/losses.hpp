#pragma once

// Training objectives. Saliency predictions enter as logits [N,1,H,W] unless
// a function says "probabilities"; masks and images are NCHW.

#include <functional>

#include "salgen/tensor.hpp"

namespace salgen {

struct LossWeights {
  double lambda_adv = 0.1;
  double alpha_depth = 0.1;
  double beta_ssim = 0.85;
  double alpha_ss = 0.85;
  double lambda1 = 0.3;  // smoothness
  double lambda2 = 1.0;  // gated CRF
  double lambda3 = 1.2;  // rotation consistency
  void validate() const;
};

struct GatedCrfConfig {
  int radius = 5;
  double sigma_p = 3.0;
  double sigma_c = 0.1;
};

/// Sparse labels: target in {0,1}, mask 1 where a stroke was drawn.
struct Scribble {
  Tensor target;
  Tensor mask;
};

/// omega = 1 + 5 |avgpool31(y) - y|, zero padding 15 counted in the divisor.
Tensor edge_weight(const Tensor& y);

struct StructureParts {
  Tensor bce;  // per-image sum(w*ce)/sum(w), batch mean
  Tensor iou;  // per-image weighted IoU loss, batch mean
  Tensor total;
};
StructureParts structure_loss_parts(const Tensor& logits, const Tensor& y);
Tensor structure_loss(const Tensor& logits, const Tensor& y);

/// Mean binary cross-entropy on logits.
Tensor bce_logits(const Tensor& logits, const Tensor& target);
/// Mean binary cross-entropy on probabilities clamped to [1e-7, 1-1e-7].
Tensor bce_prob(const Tensor& p, const Tensor& target);
/// bce_prob restricted to mask==1 pixels, averaged over them.
Tensor masked_bce_prob(const Tensor& p, const Tensor& target, const Tensor& mask);

Tensor l1_loss(const Tensor& a, const Tensor& b);
/// mean of clamp((1 - SSIM)/2, 0, 1) over 3x3 valid windows; C1 = 0.01^2, C2 = 0.03^2.
Tensor dssim(const Tensor& a, const Tensor& b);

struct DepthParts {
  Tensor ssim, l1, total;  // total = alpha (beta ssim + (1-beta) l1)
};
DepthParts depth_loss(const Tensor& pred, const Tensor& gt, const LossWeights& w);

/// BCE(d_fake, 1).
Tensor adversarial_loss(const Tensor& d_fake);
/// BCE(d_fake, 0) + BCE(d_real, 1). Pass a discriminator output computed on a
/// detached prediction so no gradient reaches the generator.
Tensor discriminator_loss(const Tensor& d_fake, const Tensor& d_real);

struct GanParts {
  Tensor rec, adv, gen;  // gen = rec + lambda_adv * adv
  Tensor dis;
};
GanParts gan_losses(const Tensor& logits, const Tensor& y, const Tensor& d_fake, const Tensor& d_fake_detached,
                    const Tensor& d_real, const LossWeights& w);

/// KL(q || p) of diagonal Gaussians [N,K]; summed over K, averaged over N.
Tensor kl_diag_gaussian(const Tensor& mu_q, const Tensor& logvar_q, const Tensor& mu_p, const Tensor& logvar_p);

struct CvaeParts {
  Tensor rec, kl, total;
};
CvaeParts cvae_loss(const Tensor& logits, const Tensor& y, const Tensor& mu_q, const Tensor& logvar_q,
                    const Tensor& mu_p, const Tensor& logvar_p);

/// BCE over labeled pixels only. Throws std::invalid_argument without labels.
Tensor partial_ce(const Tensor& logits, const Scribble& scribble);

/// Luma 0.299 R + 0.587 G + 0.114 B; single-channel images pass through.
Tensor to_gray(const Tensor& x);

/// sum over x,y of mean(|d s| * exp(-10 |d gray(x)|)); s are probabilities.
Tensor smoothness_loss(const Tensor& s, const Tensor& x);

/// Mean over ordered pixel pairs within a (2r+1)^2 window, both valid, of
/// w_ij |s_i - s_j|; per image, then batch mean. valid may be undefined (all valid).
Tensor gated_crf_loss(const Tensor& s, const Tensor& x, const Tensor& valid = Tensor(), GatedCrfConfig cfg = {});

/// alpha DSSIM(s, s_t) + (1 - alpha) L1(s, s_t) with s = sigmoid(rotated_logits)
/// and s_t = rot90(sigmoid(logits), k).
Tensor rotation_consistency_loss(const Tensor& rotated_logits, const Tensor& logits, int k, double alpha);
Tensor rotation_consistency_loss(const std::function<Tensor(const Tensor&)>& model, const Tensor& x, int k,
                                 double alpha);

struct WeakParts {
  Tensor pce, smooth, gcrf, ss, total;
};
/// pce + l1 smooth + l2 gcrf + l3 ss. rotated_logits are the model's logits on rot90(x, k).
WeakParts weak_loss(const Tensor& logits, const Tensor& rotated_logits, int k, const Tensor& x,
                    const Scribble& scribble, const LossWeights& w, GatedCrfConfig crf = {});

}  // namespace salgen
