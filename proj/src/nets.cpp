#include "salgen/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace salgen {

namespace {

std::string stage_name(int l) { return "enc.s" + std::to_string(l); }

Tensor to_nchw(const Tensor& z) { return permute(z, {0, 3, 1, 2}); }
Tensor to_nhwc(const Tensor& x) { return permute(x, {0, 2, 3, 1}); }

AttentionWeights attention_weights(const ParamStore& ps, const std::string& name, int heads) {
  return {ps.get(name + ".qkv.w"), ps.get(name + ".qkv.b"), ps.get(name + ".proj.w"), ps.get(name + ".proj.b"),
          heads};
}

Tensor patch_merge(const ParamStore& ps, const std::string& name, const Tensor& z) {
  std::int64_t n = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);
  Tensor t = reshape(z, {n, h / 2, 2, w / 2, 2, c});
  t = reshape(permute(t, {0, 1, 3, 4, 2, 5}), {n, h / 2, w / 2, 4 * c});
  return linear(ps, name + ".reduce", norm(ps, name + ".norm", t));
}

}  // namespace

int EncoderConfig::stage_window(int stage) const { return std::min(window_size, stage_side(stage)); }

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("encoder config: " + m); };
  if (stage_channels.size() != 4 || depths.size() != 4 || num_heads.size() != 4) {
    fail("depths, num_heads and stage_channels need 4 entries");
  }
  if (patch_size < 1 || window_size < 1 || image_size < 1 || mlp_ratio < 1 || in_channels < 1) {
    fail("sizes must be positive");
  }
  if (image_size % (patch_size * 8) != 0) fail("image_size must be divisible by 8 * patch_size");
  for (int l = 0; l < 4; ++l) {
    if (depths[l] < 1) fail("every stage needs at least one block");
    if (l > 0 && stage_channels[l] != 2 * stage_channels[l - 1]) fail("stage_channels must double per stage");
    if (stage_channels[l] % num_heads[l] != 0) fail("channels not divisible by heads at stage " + std::to_string(l));
    if (stage_side(l) % stage_window(l) != 0) fail("stage " + std::to_string(l) + " side not divisible by window");
  }
}

Tensor window_partition(const Tensor& z, int ws) {
  if (z.ndim() != 4) throw ShapeError("window_partition", "expected NHWC tokens");
  std::int64_t n = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);
  if (ws < 1 || h % ws != 0 || w % ws != 0) {
    throw ShapeError("window_partition", "grid " + shape_str(z.shape()) + " not divisible by window " +
                                             std::to_string(ws));
  }
  Tensor t = reshape(z, {n, h / ws, ws, w / ws, ws, c});
  return reshape(permute(t, {0, 1, 3, 2, 4, 5}), {n * (h / ws) * (w / ws), ws * ws, c});
}

Tensor window_merge(const Tensor& windows, std::int64_t n, std::int64_t h, std::int64_t w, int ws) {
  std::int64_t c = windows.dim(2);
  Tensor t = reshape(windows, {n, h / ws, w / ws, ws, ws, c});
  return reshape(permute(t, {0, 1, 3, 2, 4, 5}), {n, h, w, c});
}

Tensor shifted_window_mask(std::int64_t h, std::int64_t w, int ws, int shift) {
  auto region = [ws, shift](std::int64_t i, std::int64_t len) {
    if (i < len - ws) return 0;
    return i < len - shift ? 1 : 2;
  };
  std::vector<double> label(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) label[i * w + j] = 3 * region(i, h) + region(j, w);
  }
  Tensor lw = window_partition(Tensor::from({1, h, w, 1}, std::move(label)), ws);
  std::int64_t nw = lw.dim(0), l = lw.dim(1);
  auto lv = lw.data();
  std::vector<double> mask(static_cast<std::size_t>(nw * l * l));
  for (std::int64_t k = 0; k < nw; ++k) {
    for (std::int64_t a = 0; a < l; ++a) {
      for (std::int64_t b = 0; b < l; ++b) {
        mask[(k * l + a) * l + b] = lv[k * l + a] == lv[k * l + b] ? 0.0 : -1e9;
      }
    }
  }
  return Tensor::from({nw, l, l}, std::move(mask));
}

Tensor self_attention(const Tensor& tokens, const AttentionWeights& w, const Tensor& mask) {
  if (tokens.ndim() != 3) throw ShapeError("self_attention", "expected [B,L,C] tokens");
  std::int64_t b = tokens.dim(0), l = tokens.dim(1), c = tokens.dim(2);
  std::int64_t heads = w.heads, hd = c / heads;
  if (hd * heads != c) throw ShapeError("self_attention", "channels not divisible by heads");
  Tensor qkv = add(matmul(tokens, w.qkv_w), w.qkv_b);
  qkv = permute(reshape(qkv, {b, l, 3, heads, hd}), {2, 0, 3, 1, 4});
  Tensor q = reshape(slice(qkv, 0, 0, 1), {b, heads, l, hd}) * (1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor k = reshape(slice(qkv, 0, 1, 2), {b, heads, l, hd});
  Tensor v = reshape(slice(qkv, 0, 2, 3), {b, heads, l, hd});
  Tensor scores = matmul(q, permute(k, {0, 1, 3, 2}));
  if (mask.defined()) {
    std::int64_t nw = mask.dim(0);
    if (b % nw != 0 || mask.dim(1) != l) throw ShapeError("self_attention", "mask does not fit the windows");
    scores = reshape(reshape(scores, {b / nw, nw, heads, l, l}) + reshape(mask, {1, nw, 1, l, l}),
                     {b, heads, l, l});
  }
  Tensor out = matmul(softmax(scores, -1), v);
  out = reshape(permute(out, {0, 2, 1, 3}), {b, l, c});
  return add(matmul(out, w.proj_w), w.proj_b);
}

Tensor window_msa(const Tensor& z, const AttentionWeights& w, int ws, bool shifted) {
  if (z.ndim() != 4) throw ShapeError("window_msa", "expected NHWC tokens");
  std::int64_t n = z.dim(0), h = z.dim(1), wd = z.dim(2);
  if (ws < 1 || h % ws != 0 || wd % ws != 0) {
    throw ShapeError("window_msa", "grid " + std::to_string(h) + "x" + std::to_string(wd) +
                                       " not divisible by window " + std::to_string(ws));
  }
  int shift = shifted ? ws / 2 : 0;
  Tensor x = shift ? roll(z, {-shift, -shift}, {1, 2}) : z;
  Tensor mask = shift ? shifted_window_mask(h, wd, ws, shift) : Tensor();
  Tensor out = window_merge(self_attention(window_partition(x, ws), w, mask), n, h, wd, ws);
  return shift ? roll(out, {shift, shift}, {1, 2}) : out;
}

Generator::Generator(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const auto& e = cfg_.encoder;
  e.validate();
  if (cfg_.latent_dim < 0) throw std::invalid_argument("latent_dim must be >= 0");
  if (cfg_.cvae && cfg_.latent_dim == 0) throw std::invalid_argument("cvae heads need latent_dim > 0");

  if (cfg_.early_fusion) {
    Rng rng(derive_seed(seed, "fusion-init"));
    add_conv(ps_, rng, "fusion.conv", e.in_channels + 1, e.in_channels, 3);
  }

  Rng rng(derive_seed(seed, "enc-init"));
  int c0 = e.embed_dim();
  int side = e.stage_side(0);
  add_conv(ps_, rng, "enc.patch", e.in_channels, c0, e.patch_size);
  ps_.add("enc.pos", trunc_normal(rng, {1, side, side, c0}, 0.02));
  for (int l = 0; l < 4; ++l) {
    int c = e.stage_channels[l];
    std::string s = stage_name(l);
    if (l > 0) {
      add_norm(ps_, s + ".merge.norm", 2 * c);
      add_linear(ps_, rng, s + ".merge.reduce", 2 * c, c, false);
    }
    for (int j = 0; j < e.depths[l]; ++j) {
      std::string b = s + ".b" + std::to_string(j);
      add_norm(ps_, b + ".norm1", c);
      add_linear(ps_, rng, b + ".attn.qkv", c, 3 * c);
      add_linear(ps_, rng, b + ".attn.proj", c, c);
      add_norm(ps_, b + ".norm2", c);
      add_linear(ps_, rng, b + ".mlp.fc1", c, e.mlp_ratio * c);
      add_linear(ps_, rng, b + ".mlp.fc2", e.mlp_ratio * c, c);
    }
    add_norm(ps_, s + ".out", c);
  }

  if (cfg_.latent_dim > 0) {
    Rng r(derive_seed(seed, "inject-init"));
    int c4 = e.stage_channels[3];
    add_conv(ps_, r, "inject.conv", c4 + cfg_.latent_dim, c4, 3);
  }

  {
    Rng r(derive_seed(seed, "dec-init"));
    add_decoder(r, "dec");
  }
  if (cfg_.depth_head) {
    Rng r(derive_seed(seed, "depth-init"));
    add_decoder(r, "depth");
  }
  if (cfg_.cvae) {
    Rng r(derive_seed(seed, "cvae-init"));
    int c4 = e.stage_channels[3];
    int y_dim = (e.image_size / 4) * (e.image_size / 4);
    add_linear(ps_, r, "cvae.prior.fc1", c4, cfg_.cvae_hidden);
    add_linear(ps_, r, "cvae.prior.fc2", cfg_.cvae_hidden, 2 * cfg_.latent_dim, true, true);
    add_linear(ps_, r, "cvae.post.fc1", c4 + y_dim, cfg_.cvae_hidden);
    add_linear(ps_, r, "cvae.post.fc2", cfg_.cvae_hidden, 2 * cfg_.latent_dim, true, true);
  }
}

void Generator::add_decoder(Rng& rng, const std::string& p) {
  const auto& d = cfg_.decoder;
  int c = d.channels, cat = 4 * c;
  for (int l = 0; l < 4; ++l) {
    add_conv(ps_, rng, p + ".reduce" + std::to_string(l), cfg_.encoder.stage_channels[l], c, d.reduce_kernel);
  }
  add_conv(ps_, rng, p + ".rcab.c1", cat, cat, 3);
  add_conv(ps_, rng, p + ".rcab.c2", cat, cat, 3);
  add_conv(ps_, rng, p + ".rcab.ca1", cat, cat / d.reduction, 1);
  add_conv(ps_, rng, p + ".rcab.ca2", cat / d.reduction, cat, 1);
  for (int dil : d.dilations) add_conv(ps_, rng, p + ".msd.d" + std::to_string(dil), cat, c, 3);
  add_conv(ps_, rng, p + ".msd.gp", cat, c, 1);
  add_conv(ps_, rng, p + ".msd.fuse", c * static_cast<int>(d.dilations.size() + 1), c, 1);
  add_conv(ps_, rng, p + ".head", c, 1, 3, true, d.zero_init_head);
}

Tensor Generator::fuse(const Tensor& rgb, const Tensor& depth) const {
  if (!cfg_.early_fusion) throw std::logic_error("early fusion is disabled in this generator");
  return conv(ps_, "fusion.conv", concat({rgb, depth}, 1), {1, 1, 1});
}

FeaturePyramid Generator::encode(const Tensor& x) const {
  const auto& e = cfg_.encoder;
  if (x.ndim() != 4 || x.dim(1) != e.in_channels || x.dim(2) != e.image_size || x.dim(3) != e.image_size) {
    throw ShapeError("encode", "expected [N," + std::to_string(e.in_channels) + "," + std::to_string(e.image_size) +
                                   "," + std::to_string(e.image_size) + "], got " + shape_str(x.shape()));
  }
  Tensor z = to_nhwc(conv(ps_, "enc.patch", x, {e.patch_size, 0, 1})) + ps_.get("enc.pos");
  FeaturePyramid out;
  for (int l = 0; l < 4; ++l) {
    std::string s = stage_name(l);
    if (l > 0) z = patch_merge(ps_, s + ".merge", z);
    int ws = e.stage_window(l);
    bool can_shift = e.stage_side(l) > ws;
    for (int j = 0; j < e.depths[l]; ++j) {
      std::string b = s + ".b" + std::to_string(j);
      auto aw = attention_weights(ps_, b + ".attn", e.num_heads[l]);
      z = z + window_msa(norm(ps_, b + ".norm1", z), aw, ws, can_shift && j % 2 == 1);
      Tensor m = linear(ps_, b + ".mlp.fc2", gelu(linear(ps_, b + ".mlp.fc1", norm(ps_, b + ".norm2", z))));
      z = z + m;
    }
    out.t[l] = to_nchw(norm(ps_, s + ".out", z));
  }
  return out;
}

Tensor Generator::inject(const Tensor& t4, const Tensor& h) const {
  if (cfg_.latent_dim == 0) throw std::logic_error("latent injection is disabled in this generator");
  std::int64_t n = t4.dim(0), k = cfg_.latent_dim;
  if (h.ndim() != 2 || h.dim(0) != n || h.dim(1) != k) {
    throw ShapeError("inject_latent", "h must be [" + std::to_string(n) + "," + std::to_string(k) + "], got " +
                                          shape_str(h.shape()));
  }
  Tensor hb = reshape(h, {n, k, 1, 1}) * Tensor::ones({1, 1, t4.dim(2), t4.dim(3)});
  return conv(ps_, "inject.conv", concat({t4, hb}, 1), {1, 1, 1});
}

FeaturePyramid Generator::with_latent(const FeaturePyramid& p, const Tensor& h) const {
  FeaturePyramid q = p;
  q.t[3] = inject(p.t[3], h);
  return q;
}

Tensor Generator::decode(const std::string& p, const FeaturePyramid& pyr) const {
  const auto& d = cfg_.decoder;
  for (int l = 0; l < 4; ++l) {
    if (pyr.t[l].ndim() != 4 || pyr.t[l].dim(1) != cfg_.encoder.stage_channels[l]) {
      throw ShapeError("decode", "level " + std::to_string(l) + " has shape " + shape_str(pyr.t[l].shape()));
    }
  }
  std::int64_t s1 = pyr.t[0].dim(2), s1w = pyr.t[0].dim(3);
  std::vector<Tensor> levels;
  for (int l = 0; l < 4; ++l) {
    Tensor r = relu(conv(ps_, p + ".reduce" + std::to_string(l), pyr.t[l], {1, d.reduce_kernel / 2, 1}));
    levels.push_back(l == 0 ? r : upsample_bilinear(r, s1, s1w));
  }
  Tensor x = concat(levels, 1);

  Tensor res = conv(ps_, p + ".rcab.c2", relu(conv(ps_, p + ".rcab.c1", x, {1, 1, 1})), {1, 1, 1});
  Tensor att = sigmoid(conv(ps_, p + ".rcab.ca2", relu(conv(ps_, p + ".rcab.ca1", global_avg_pool(res)))));
  x = x + res * att;

  std::vector<Tensor> branches;
  for (int dil : d.dilations) {
    branches.push_back(relu(conv(ps_, p + ".msd.d" + std::to_string(dil), x, {1, dil, dil})));
  }
  Tensor g = relu(conv(ps_, p + ".msd.gp", global_avg_pool(x)));
  branches.push_back(upsample_bilinear(g, s1, s1w));
  Tensor y = relu(conv(ps_, p + ".msd.fuse", concat(branches, 1)));

  Tensor logits = conv(ps_, p + ".head", y, {1, 1, 1});
  return upsample_bilinear(logits, cfg_.encoder.image_size, cfg_.encoder.image_size);
}

Tensor Generator::decode_saliency(const FeaturePyramid& p) const { return decode("dec", p); }

Tensor Generator::decode_depth(const FeaturePyramid& p) const {
  if (!cfg_.depth_head) throw std::logic_error("depth head is disabled in this generator");
  return sigmoid(decode("depth", p));
}

Tensor Generator::forward(const Tensor& x, const Tensor& h) const {
  FeaturePyramid p = encode(x);
  if (cfg_.latent_dim > 0) {
    if (!h.defined()) throw std::invalid_argument("generator with a latent needs h");
    p = with_latent(p, h);
  }
  return decode_saliency(p);
}

namespace {

GaussianParams split_gaussian(const Tensor& out, int k) {
  return {slice(out, 1, 0, k), slice(out, 1, k, 2 * k)};
}

Tensor pooled_t4(const FeaturePyramid& p) {
  const Tensor& t4 = p.t[3];
  return reshape(global_avg_pool(t4), {t4.dim(0), t4.dim(1)});
}

}  // namespace

GaussianParams Generator::prior(const FeaturePyramid& p) const {
  if (!cfg_.cvae) throw std::logic_error("cvae heads are disabled in this generator");
  Tensor hdn = relu(linear(ps_, "cvae.prior.fc1", pooled_t4(p)));
  return split_gaussian(linear(ps_, "cvae.prior.fc2", hdn), cfg_.latent_dim);
}

GaussianParams Generator::posterior(const FeaturePyramid& p, const Tensor& y) const {
  if (!cfg_.cvae) throw std::logic_error("cvae heads are disabled in this generator");
  if (!y.defined()) throw std::invalid_argument("posterior head requires the ground-truth mask y");
  int s = cfg_.encoder.image_size;
  if (y.ndim() != 4 || y.dim(1) != 1 || y.dim(2) != s || y.dim(3) != s || y.dim(0) != p.t[3].dim(0)) {
    throw ShapeError("posterior", "y must be [N,1," + std::to_string(s) + "," + std::to_string(s) + "]");
  }
  Tensor yd = reshape(avg_pool2d(y, 4, 4, 0), {y.dim(0), -1});
  Tensor hdn = relu(linear(ps_, "cvae.post.fc1", concat({pooled_t4(p), yd}, 1)));
  return split_gaussian(linear(ps_, "cvae.post.fc2", hdn), cfg_.latent_dim);
}

Discriminator::Discriminator(int image_channels, int channels, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "disc-init"));
  int in = image_channels + 1;
  for (int i = 0; i < 4; ++i) {
    int out = i == 3 ? 1 : channels;
    add_conv(ps_, rng, "disc.c" + std::to_string(i), in, out, 3);
    if (i < 3) add_norm(ps_, "disc.bn" + std::to_string(i), out);
    in = out;
  }
}

Tensor Discriminator::logits(const Tensor& x, const Tensor& m) const {
  if (x.ndim() != 4 || m.ndim() != 4 || x.dim(0) != m.dim(0) || x.dim(2) != m.dim(2) || x.dim(3) != m.dim(3) ||
      m.dim(1) != 1) {
    throw ShapeError("discriminate", "image " + shape_str(x.shape()) + " vs map " + shape_str(m.shape()));
  }
  Tensor z = concat({x, m}, 1);
  for (int i = 0; i < 4; ++i) {
    z = conv(ps_, "disc.c" + std::to_string(i), z, {2, 1, 1});
    if (i < 3) {
      std::string bn = "disc.bn" + std::to_string(i);
      z = leaky_relu(batch_norm(z, ps_.get(bn + ".g"), ps_.get(bn + ".b")));
    }
  }
  return upsample_bilinear(z, x.dim(2), x.dim(3));
}

Tensor Discriminator::operator()(const Tensor& x, const Tensor& m) const { return sigmoid(logits(x, m)); }

}  // namespace salgen
