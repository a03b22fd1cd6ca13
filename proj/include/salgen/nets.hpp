#pragma once

// Windowed-attention encoder, convolutional decoders, latent injection,
// CVAE heads and the conditional discriminator. Images are NCHW, encoder
// tokens NHWC.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "salgen/layers.hpp"

namespace salgen {

struct EncoderConfig {
  int image_size = 64;
  int patch_size = 4;
  int in_channels = 3;
  int window_size = 4;
  int mlp_ratio = 1;
  std::vector<int> depths{1, 1, 2, 1};
  std::vector<int> num_heads{1, 2, 4, 8};
  std::vector<int> stage_channels{32, 64, 128, 256};

  int embed_dim() const { return stage_channels.front(); }
  int stage_side(int stage) const { return image_size / patch_size >> stage; }
  /// Window actually used at a stage: a grid smaller than the window is one window.
  int stage_window(int stage) const;
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

struct DecoderConfig {
  int channels = 32;
  int reduction = 4;
  int reduce_kernel = 1;  // per-level channel reduction conv
  std::vector<int> dilations{1, 3, 5};
  bool zero_init_head = false;
};

struct NetConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int latent_dim = 0;  // 0: no latent injection
  bool depth_head = false;
  bool early_fusion = false;
  bool cvae = false;
  int cvae_hidden = 64;
  int disc_channels = 64;
};

struct FeaturePyramid {
  std::array<Tensor, 4> t;  // NCHW, strides 4/8/16/32
};

struct GaussianParams {
  Tensor mu;      // [N,K]
  Tensor logvar;  // [N,K]
};

/// [N,H,W,C] -> [N*nW, ws*ws, C], windows in row-major order.
Tensor window_partition(const Tensor& z, int ws);
/// Inverse of window_partition.
Tensor window_merge(const Tensor& windows, std::int64_t n, std::int64_t h, std::int64_t w, int ws);
/// Additive mask [nW, L, L] for a grid cyclically shifted by -shift: 0 for
/// pairs from the same pre-shift region, -1e9 otherwise.
Tensor shifted_window_mask(std::int64_t h, std::int64_t w, int ws, int shift);

struct AttentionWeights {
  Tensor qkv_w, qkv_b;    // [C,3C], [3C]
  Tensor proj_w, proj_b;  // [C,C], [C]
  int heads = 1;
};

/// Multi-head scaled dot-product self-attention over tokens [B,L,C]. The
/// mask, if defined, is [nW,L,L] and B must be a multiple of nW.
Tensor self_attention(const Tensor& tokens, const AttentionWeights& w, const Tensor& mask = Tensor());

/// Window attention on an NHWC grid; shifted rolls by -ws/2 first, masks
/// wrapped pairs and rolls back.
Tensor window_msa(const Tensor& z, const AttentionWeights& w, int ws, bool shifted);

/// Saliency generator: encoder (theta1) plus decoders (theta2). Parameter
/// names are prefixed "fusion.", "enc.", "inject.", "dec.", "depth.", "cvae.".
class Generator {
 public:
  Generator(const NetConfig& cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  /// concat(rgb, depth) -> 3x3 conv -> 3 channels.
  Tensor fuse(const Tensor& rgb, const Tensor& depth) const;
  FeaturePyramid encode(const Tensor& x) const;
  /// Broadcast h [N,K] over t4, concat channel-wise, 3x3 conv back to t4's channels.
  Tensor inject(const Tensor& t4, const Tensor& h) const;
  FeaturePyramid with_latent(const FeaturePyramid& p, const Tensor& h) const;
  /// Logits [N,1,S,S].
  Tensor decode_saliency(const FeaturePyramid& p) const;
  /// Depth in (0,1), [N,1,S,S].
  Tensor decode_depth(const FeaturePyramid& p) const;
  /// encode -> (inject h when the latent is enabled) -> decode_saliency.
  Tensor forward(const Tensor& x, const Tensor& h = Tensor()) const;

  GaussianParams prior(const FeaturePyramid& p) const;
  GaussianParams posterior(const FeaturePyramid& p, const Tensor& y) const;

 private:
  Tensor decode(const std::string& prefix, const FeaturePyramid& p) const;
  void add_decoder(Rng& rng, const std::string& prefix);

  NetConfig cfg_;
  ParamStore ps_;
};

/// Image-conditioned pixel-wise discriminator (parameters beta).
class Discriminator {
 public:
  Discriminator(int image_channels, int channels, std::uint64_t seed);
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  /// Realness in (0,1), [N,1,H,W].
  Tensor operator()(const Tensor& x, const Tensor& m) const;
  /// Pre-sigmoid realness at full resolution.
  Tensor logits(const Tensor& x, const Tensor& m) const;

 private:
  ParamStore ps_;
};

}  // namespace salgen
