#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles/oracles.hpp"
#include "salgen/gradcheck.hpp"
#include "salgen/losses.hpp"
#include "support.hpp"

using namespace salgen;
using doctest::Approx;

namespace {

Tensor step_mask(int h, int w, int col) {
  Tensor y = Tensor::zeros({1, 1, h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = col; j < w; ++j) y.mutable_data()[i * w + j] = 1.0;
  }
  return y;
}

std::vector<double> map_of(const Tensor& t, std::int64_t n) {
  std::int64_t hw = t.dim(2) * t.dim(3);
  auto d = t.data();
  return {d.begin() + n * hw, d.begin() + (n + 1) * hw};
}

double check_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  GradCheckOptions opt;
  opt.directions = 4;
  return finite_diff_check(f, x, opt).max_rel_error;
}

}  // namespace

TEST_CASE("edge weight") {
  SUBCASE("all zeros is 1 everywhere") {
    Tensor w = edge_weight(Tensor::zeros({1, 1, 20, 20}));
    for (double v : w.data()) CHECK(v == 1.0);
  }
  SUBCASE("all ones is 1 away from the padded border") {
    Tensor w = edge_weight(Tensor::ones({1, 1, 64, 64}));
    CHECK(w.at({0, 0, 32, 32}) == Approx(1.0).epsilon(1e-12));
    CHECK(w.at({0, 0, 0, 0}) > 1.0);
  }
  SUBCASE("vertical step edge matches direct pooling") {
    Tensor y = step_mask(64, 64, 32);
    Tensor w = edge_weight(y);
    auto ref = oracle::edge_weight(map_of(y, 0), 64, 64);
    double peak = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(w.data()[i] == Approx(ref[i]).epsilon(1e-12));
      peak = std::max(peak, w.data()[i]);
    }
    // interior rows: 1 + 5 * 15/31 on the first foreground column
    CHECK(w.at({0, 0, 32, 32}) == Approx(1.0 + 75.0 / 31.0).epsilon(1e-12));
    CHECK(w.at({0, 0, 32, 31}) == Approx(1.0 + 75.0 / 31.0).epsilon(1e-12));
    CHECK(peak <= 6.0);
  }
  SUBCASE("range and rejection") {
    Rng r(1);
    Tensor w = edge_weight(testutil::binary(r, {2, 1, 12, 12}));
    for (double v : w.data()) CHECK((v >= 1.0 && v <= 6.0));
    CHECK_THROWS_AS(edge_weight(Tensor::full({1, 1, 4, 4}, 0.5)), std::invalid_argument);
  }
}

TEST_CASE("structure loss") {
  Rng r(2);
  SUBCASE("perfect prediction is 0") {
    Tensor y = testutil::binary(r, {2, 1, 8, 8});
    Tensor s = y * 2000.0 - 1000.0;
    auto parts = structure_loss_parts(s, y);
    CHECK(parts.bce.item() == Approx(0.0));
    CHECK(parts.iou.item() == Approx(0.0));
  }
  SUBCASE("disjoint prediction with flat weights") {
    Tensor y = Tensor::zeros({1, 1, 8, 8});
    auto parts = structure_loss_parts(Tensor::full({1, 1, 8, 8}, 1000.0), y);
    CHECK(parts.iou.item() == Approx(1.0 - 1.0 / 65.0).epsilon(1e-12));
  }
  SUBCASE("random pairs match the scalar oracle") {
    for (int t = 0; t < 10; ++t) {
      Tensor s = r.randn({3, 1, 8, 8}, 2.0), y = testutil::binary(r, {3, 1, 8, 8});
      std::vector<oracle::Map> sl, yl;
      for (int n = 0; n < 3; ++n) {
        sl.push_back(map_of(s, n));
        yl.push_back(map_of(y, n));
      }
      CHECK(std::abs(structure_loss(s, y).item() - oracle::structure_loss(sl, yl, 8, 8)) < 1e-10);
    }
  }
  SUBCASE("horizontal flip invariance") {
    Tensor s = r.randn({1, 1, 8, 8}), y = testutil::binary(r, {1, 1, 8, 8});
    auto flip = [](const Tensor& t) {
      Tensor o = t.clone();
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) o.mutable_data()[i * 8 + j] = t.data()[i * 8 + 7 - j];
      }
      return o;
    };
    CHECK(structure_loss(flip(s), flip(y)).item() == Approx(structure_loss(s, y).item()).epsilon(1e-12));
  }
  SUBCASE("gradient and errors") {
    Tensor y = testutil::binary(r, {2, 1, 8, 8});
    CHECK(check_grad([&](const Tensor& s) { return structure_loss(s, y); }, r.randn({2, 1, 8, 8})) <= 1e-4);
    Tensor bad = Tensor::zeros({1, 1, 8, 8});
    bad.mutable_data()[3] = std::nan("");
    CHECK_THROWS(structure_loss(bad, Tensor::zeros({1, 1, 8, 8})));
    CHECK_THROWS_AS(structure_loss(Tensor::zeros({1, 1, 8, 8}), Tensor::zeros({1, 1, 4, 4})), ShapeError);
  }
}

TEST_CASE("depth loss") {
  LossWeights w;
  Rng r(3);
  Tensor gt = testutil::binary(r, {1, 1, 8, 8});
  CHECK(depth_loss(gt, gt, w).total.item() == 0.0);
  auto inv = depth_loss(1.0 - gt, gt, w);
  CHECK(inv.l1.item() == Approx(1.0));
  CHECK(inv.total.item() - w.alpha_depth * w.beta_ssim * inv.ssim.item() == Approx(0.015).epsilon(1e-12));
  Tensor d = r.rand({1, 1, 8, 8}, 0.0, 0.8);
  auto shifted = depth_loss(d + 0.1, d, w);
  CHECK(w.alpha_depth * (1 - w.beta_ssim) * shifted.l1.item() == Approx(0.1 * 0.1 * 0.15).epsilon(1e-12));
  CHECK_THROWS_AS(depth_loss(d + 0.5, d, w), std::domain_error);
  CHECK(check_grad([&](const Tensor& p) { return depth_loss(p, d, w).total; }, r.rand({1, 1, 8, 8}, 0.2, 0.8)) <=
        1e-4);
}

TEST_CASE("gan losses") {
  LossWeights w;
  Rng r(4);
  Tensor y = testutil::binary(r, {1, 1, 8, 8});
  Tensor half = Tensor::full({1, 1, 8, 8}, 0.5);
  SUBCASE("uniform discriminator") {
    auto g = gan_losses(r.randn({1, 1, 8, 8}), y, half, half, half, w);
    CHECK(g.adv.item() == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(g.dis.item() == Approx(2 * std::log(2.0)).epsilon(1e-12));
    CHECK(g.gen.item() == Approx(g.rec.item() + 0.1 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("perfect discriminator") {
    CHECK(discriminator_loss(Tensor::zeros({1, 1, 8, 8}), Tensor::ones({1, 1, 8, 8})).item() < 1e-6);
  }
  SUBCASE("random case against scalar BCE") {
    Tensor fake = r.rand({2, 1, 4, 4}, 0.05, 0.95), real = r.rand({2, 1, 4, 4}, 0.05, 0.95);
    double ref_adv = 0, ref_dis = 0;
    for (std::int64_t i = 0; i < 32; ++i) {
      ref_adv -= std::log(fake.data()[i]);
      ref_dis -= std::log(1 - fake.data()[i]) + std::log(real.data()[i]);
    }
    CHECK(std::abs(adversarial_loss(fake).item() - ref_adv / 32) < 1e-10);
    CHECK(std::abs(discriminator_loss(fake, real).item() - ref_dis / 32) < 1e-10);
  }
  SUBCASE("discriminator loss does not reach the generator") {
    Tensor logits = r.randn({1, 1, 8, 8}, 1.0, true);
    Tensor fake = sigmoid(logits);
    auto g = gan_losses(logits, y, fake, fake.detach(), half, w);
    backward(g.dis);
    CHECK_FALSE(logits.has_grad());
    backward(g.gen);
    CHECK(logits.has_grad());
  }
}

TEST_CASE("diagonal Gaussian KL") {
  Tensor z = Tensor::zeros({1, 1});
  CHECK(kl_diag_gaussian(Tensor::ones({1, 1}), z, z, z).item() == Approx(0.5).epsilon(1e-14));
  Rng r(5);
  Tensor mu = r.randn({2, 3}), lv = r.randn({2, 3}, 0.3);
  CHECK(kl_diag_gaussian(mu, lv, mu, lv).item() == 0.0);

  Tensor mq = r.randn({1, 3}), lq = r.randn({1, 3}, 0.3), mp = r.randn({1, 3}), lp = r.randn({1, 3}, 0.3);
  double kl = kl_diag_gaussian(mq, lq, mp, lp).item();
  std::mt19937_64 eng(6);
  std::normal_distribution<double> nd;
  const int n = 1000000;
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      double sq = std::exp(lq.data()[k] / 2), sp = std::exp(lp.data()[k] / 2);
      double h = mq.data()[k] + sq * nd(eng);
      double zq = (h - mq.data()[k]) / sq, zp = (h - mp.data()[k]) / sp;
      acc += -std::log(sq) - zq * zq / 2 + std::log(sp) + zp * zp / 2;
    }
  }
  CHECK(std::abs(acc / n - kl) <= 0.02 * kl);
}

TEST_CASE("partial cross-entropy") {
  Rng r(7);
  Tensor t = testutil::binary(r, {1, 1, 8, 8});
  Tensor m = testutil::binary(r, {1, 1, 8, 8}, 0.3);
  CHECK_THROWS_AS(partial_ce(r.randn({1, 1, 8, 8}), {t, Tensor::zeros({1, 1, 8, 8})}), std::invalid_argument);
  CHECK(partial_ce(t * 60.0 - 30.0, {t, m}).item() < 1e-12);
  Tensor s = r.randn({1, 1, 8, 8}, 1.0, true);
  Tensor loss = partial_ce(s, {t, m});
  CHECK(std::abs(loss.item() - oracle::partial_ce(map_of(s, 0), map_of(t, 0), map_of(m, 0))) < 1e-12);
  backward(loss);
  for (int i = 0; i < 64; ++i) {
    if (m.data()[i] == 0.0) CHECK(s.grad()[i] == 0.0);
  }
  CHECK(check_grad([&](const Tensor& x) { return partial_ce(x, {t, m}); }, s.detach()) <= 1e-4);
}

TEST_CASE("smoothness loss") {
  Tensor flat = Tensor::full({1, 3, 8, 8}, 0.4);
  Tensor edge_img = flat.clone();
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 8; ++i) {
      for (int j = 4; j < 8; ++j) edge_img.mutable_data()[(c * 8 + i) * 8 + j] = 0.9;
    }
  }
  Tensor s = step_mask(8, 8, 4) * 0.5 + 0.2;
  CHECK(smoothness_loss(Tensor::full({1, 1, 8, 8}, 0.3), edge_img).item() == 0.0);
  double on_flat = smoothness_loss(s, flat).item();
  double on_edge = smoothness_loss(s, edge_img).item();
  CHECK(on_flat > 0);
  CHECK(on_edge / on_flat == Approx(std::exp(-10.0 * 0.5)).epsilon(1e-9));
  Tensor s2 = step_mask(8, 8, 4) + 0.0;
  CHECK(smoothness_loss(s2, flat).item() == Approx(2 * on_flat).epsilon(1e-12));
  Rng r(8);
  Tensor x = r.rand({1, 3, 8, 8});
  CHECK(check_grad([&](const Tensor& p) { return smoothness_loss(p, x); }, r.rand({1, 1, 8, 8})) <= 1e-4);
}

TEST_CASE("gated CRF loss") {
  GatedCrfConfig cfg;
  SUBCASE("two-pixel closed form") {
    Tensor s = Tensor::from({1, 1, 1, 2}, {0.0, 1.0});
    Tensor x = Tensor::full({1, 3, 1, 2}, 0.5);
    CHECK(gated_crf_loss(s, x, Tensor(), cfg).item() == Approx(std::exp(-1.0 / 18.0)).epsilon(1e-14));
  }
  SUBCASE("constant s is 0") {
    Rng r(9);
    CHECK(gated_crf_loss(Tensor::full({1, 1, 6, 6}, 0.7), r.rand({1, 3, 6, 6})).item() == 0.0);
  }
  SUBCASE("random 6x6 matches the pair oracle") {
    Rng r(10);
    cfg.radius = 2;
    for (int t = 0; t < 5; ++t) {
      Tensor s = r.rand({2, 1, 6, 6}), x = r.rand({2, 3, 6, 6});
      std::vector<oracle::Map> sl;
      std::vector<std::vector<double>> imgs;
      for (int n = 0; n < 2; ++n) {
        sl.push_back(map_of(s, n));
        auto d = x.data();
        imgs.emplace_back(d.begin() + n * 108, d.begin() + (n + 1) * 108);
      }
      double ref = oracle::gated_crf(sl, imgs, 3, 6, 6, cfg.radius, cfg.sigma_p, cfg.sigma_c);
      CHECK(std::abs(gated_crf_loss(s, x, Tensor(), cfg).item() - ref) < 1e-10);
    }
  }
  SUBCASE("gradient") {
    Rng r(11);
    cfg.radius = 2;
    Tensor x = r.rand({1, 3, 6, 6});
    CHECK(check_grad([&](const Tensor& p) { return gated_crf_loss(p, x, Tensor(), cfg); }, r.rand({1, 1, 6, 6})) <=
          1e-4);
  }
}

TEST_CASE("rotation consistency loss") {
  Rng r(12);
  Tensor x = r.rand({1, 3, 8, 8});
  for (int k = 1; k <= 3; ++k) {
    auto constant = [](const Tensor& in) { return Tensor::full({in.dim(0), 1, in.dim(2), in.dim(3)}, 0.7); };
    CHECK(rotation_consistency_loss(constant, x, k, 0.85).item() == Approx(0.0));
    auto pixelwise = [](const Tensor& in) { return to_gray(in) * 4.0 - 2.0; };
    CHECK(rotation_consistency_loss(pixelwise, x, k, 0.85).item() == Approx(0.0));
  }
  Tensor wgt = r.randn({1, 3, 3, 3});
  auto conv_model = [&](const Tensor& in) { return conv2d(in, wgt, Tensor::zeros({1}), {1, 1, 1}); };
  CHECK(rotation_consistency_loss(conv_model, x, 1, 0.85).item() > 1e-3);
  CHECK_THROWS_AS(rotation_consistency_loss(conv_model, r.rand({1, 3, 8, 6}), 1, 0.85), ShapeError);
  Tensor base = r.randn({1, 1, 8, 8});
  CHECK(check_grad([&](const Tensor& rl) { return rotation_consistency_loss(rl, base, 2, 0.85); },
                   r.randn({1, 1, 8, 8})) <= 1e-4);
}

TEST_CASE("weak loss") {
  Rng r(13);
  LossWeights w;
  Tensor x = r.rand({1, 3, 8, 8});
  Tensor t = testutil::binary(r, {1, 1, 8, 8}), m = testutil::binary(r, {1, 1, 8, 8}, 0.3);
  Tensor s = r.randn({1, 1, 8, 8}), sr = r.randn({1, 1, 8, 8});
  auto parts = weak_loss(s, sr, 1, x, {t, m}, w);
  double expect = parts.pce.item() + 0.3 * parts.smooth.item() + 1.0 * parts.gcrf.item() + 1.2 * parts.ss.item();
  CHECK(std::abs(parts.total.item() - expect) < 1e-12);
  CHECK(parts.pce.item() == Approx(partial_ce(s, {t, m}).item()).epsilon(1e-14));
  CHECK(parts.smooth.item() == Approx(smoothness_loss(sigmoid(s), x).item()).epsilon(1e-14));
  CHECK(parts.gcrf.item() == Approx(gated_crf_loss(sigmoid(s), x).item()).epsilon(1e-14));
  CHECK(parts.ss.item() == Approx(rotation_consistency_loss(sr, s, 1, w.alpha_ss).item()).epsilon(1e-14));
  LossWeights no_ss = w;
  no_ss.lambda3 = 0;
  CHECK(std::abs(parts.total.item() - weak_loss(s, sr, 1, x, {t, m}, no_ss).total.item() - 1.2 * parts.ss.item()) <
        1e-12);

  Tensor sat = t * 2000.0 - 1000.0;
  auto zero = weak_loss(sat, sat, 2, Tensor::full({1, 3, 8, 8}, 0.5), {t, m}, LossWeights{0.1, 0.1, 0.85, 0.85, 0, 0, 0});
  CHECK(zero.total.item() < 1e-12);
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.lambda2 = -1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = LossWeights{};
  w.beta_ssim = 1.5;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}
