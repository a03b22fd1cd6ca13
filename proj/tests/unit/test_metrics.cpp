#include <doctest.h>

#include "oracles/oracles.hpp"
#include "salgen/data.hpp"
#include "salgen/evaluate.hpp"
#include "salgen/metrics.hpp"
#include "salgen/trainer.hpp"
#include "support.hpp"

using namespace salgen;
using doctest::Approx;

namespace {

Tensor map2(int h, int w, const std::vector<double>& v) { return Tensor::from({1, h, w}, v); }

Tensor flip(const Tensor& t) {
  Tensor o = t.clone();
  std::int64_t h = t.dim(1), w = t.dim(2);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) o.mutable_data()[i * w + j] = t.data()[i * w + w - 1 - j];
  }
  return o;
}

// gt with a non-empty foreground and background
Tensor random_gt(Rng& r, int h, int w) {
  for (;;) {
    Tensor g = testutil::binary(r, {1, h, w});
    double s = 0;
    for (double v : g.data()) s += v;
    if (s > 0 && s < h * w) return g;
  }
}

Tensor quantized(Rng& r, int h, int w) {
  Tensor p = r.rand({1, h, w});
  for (auto& v : p.mutable_data()) v = std::round(v * 255) / 255;
  return p;
}

}  // namespace

TEST_CASE("mae") {
  Rng r(1);
  Tensor g = random_gt(r, 4, 4);
  CHECK(mae(g, g) == 0.0);
  CHECK(mae(1.0 - g, g) == 1.0);
  for (int t = 0; t < 20; ++t) {
    Tensor p = r.rand({1, 4, 4});
    CHECK(std::abs(mae(p, g) - oracle::mae(p.to_vector(), g.to_vector())) < 1e-12);
    CHECK(mae(p, g) + mae(1.0 - p, g) == Approx(1.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(mae(r.rand({1, 4, 4}), Tensor::zeros({1, 4, 5})), ShapeError);
}

TEST_CASE("F-measure") {
  Rng r(2);
  Tensor g = random_gt(r, 6, 6);
  auto curve = f_measure_curve(g, g);
  CHECK(curve.size() == 256);
  for (int i = 0; i < 255; ++i) CHECK(curve[i] == Approx(1.0).epsilon(1e-14));
  CHECK(f_measure_mean(g, g) == Approx(oracle::f_mean(g.to_vector(), g.to_vector())).epsilon(1e-14));
  CHECK(f_measure_mean(Tensor::zeros({1, 6, 6}), g) == 0.0);
  for (int t = 0; t < 20; ++t) {
    Tensor p = quantized(r, 6, 6);
    CHECK(std::abs(f_measure_mean(p, g) - oracle::f_mean(p.to_vector(), g.to_vector())) < 1e-10);
  }
}

TEST_CASE("E-measure") {
  Rng r(3);
  Tensor g = random_gt(r, 6, 6);
  CHECK(e_measure(g, g) == Approx(1.0).epsilon(1e-12));
  Tensor half = map2(2, 4, {1, 1, 0, 0, 1, 1, 0, 0});
  CHECK(e_measure(1.0 - half, half) == Approx(0.0).epsilon(1e-12));
  for (int t = 0; t < 20; ++t) {
    Tensor p = quantized(r, 6, 6);
    Tensor b = testutil::binary(r, {1, 6, 6});
    CHECK(std::abs(e_measure(b, g) - oracle::e_single(b.to_vector(), g.to_vector())) < 1e-10);
    CHECK(std::abs(e_measure_mean(p, g) - oracle::e_mean(p.to_vector(), g.to_vector())) < 1e-10);
  }
}

TEST_CASE("S-measure") {
  Rng r(4);
  Tensor g = random_gt(r, 8, 8);
  CHECK(s_measure(g, g) == Approx(1.0).epsilon(1e-12));
  Tensor p = r.rand({1, 8, 8});
  double mean_p = 0;
  for (double v : p.data()) mean_p += v / 64;
  CHECK(s_measure(p, Tensor::zeros({1, 8, 8})) == Approx(1.0 - mean_p).epsilon(1e-14));
  CHECK(s_measure(p, Tensor::ones({1, 8, 8})) == Approx(mean_p).epsilon(1e-14));
  for (int t = 0; t < 20; ++t) {
    Tensor q = r.rand({1, 8, 8});
    CHECK(std::abs(s_measure(q, g) - oracle::s_measure(q.to_vector(), g.to_vector(), 8, 8)) < 1e-10);
  }

  SUBCASE("frozen hand case") {
    std::vector<double> pv(64), gv(64);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        gv[i * 8 + j] = (i >= 2 && i <= 5 && j >= 1 && j <= 4) ? 1.0 : 0.0;
        pv[i * 8 + j] = ((i * 5 + j * 3) % 11) / 10.0;
      }
    }
    CHECK(s_measure(map2(8, 8, pv), map2(8, 8, gv)) == Approx(0.32868924349348999).epsilon(1e-12));
  }
}

TEST_CASE("all measures are invariant under a horizontal flip") {
  Rng r(5);
  for (int t = 0; t < 5; ++t) {
    Tensor g = random_gt(r, 7, 5), p = quantized(r, 7, 5);
    CHECK(mae(flip(p), flip(g)) == Approx(mae(p, g)).epsilon(1e-14));
    CHECK(f_measure_mean(flip(p), flip(g)) == Approx(f_measure_mean(p, g)).epsilon(1e-12));
    CHECK(e_measure_mean(flip(p), flip(g)) == Approx(e_measure_mean(p, g)).epsilon(1e-12));
    CHECK(s_measure(flip(p), flip(g)) == Approx(s_measure(p, g)).epsilon(1e-12));
  }
}

TEST_CASE("report aggregation") {
  std::vector<ImageMetrics> imgs{{"a", 0.1, 0.8, 0.9, 0.7, 0.2}, {"b", 0.3, 0.6, 0.5, 0.9, 0.4}, {"c", 0.2, 0.1, 0.4, 0.5, 0.0}};
  auto rep = aggregate(imgs);
  CHECK(rep.count == 3);
  CHECK(rep.mae == Approx((0.1 + 0.3 + 0.2) / 3).epsilon(1e-14));
  CHECK(rep.f == Approx((0.8 + 0.6 + 0.1) / 3).epsilon(1e-14));
  CHECK(rep.e == Approx((0.9 + 0.5 + 0.4) / 3).epsilon(1e-14));
  CHECK(rep.s == Approx((0.7 + 0.9 + 0.5) / 3).epsilon(1e-14));
  CHECK(rep.entropy == Approx(0.2).epsilon(1e-14));
  auto j = rep.to_json();
  CHECK(j["count"] == 3);
  std::string lines = rep.to_jsonl();
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 4);
}

TEST_CASE("dataset evaluation") {
  SynthSpec spec;
  spec.seed = 11;
  spec.count = 5;
  spec.size = 32;
  Dataset ds = synth_generate(spec);

  SUBCASE("ground truth as prediction") {
    auto rep = evaluate_dataset(ground_truth_predictor(), ds, {2, nullptr});
    CHECK(rep.count == 5);
    CHECK(rep.mae == 0.0);
    CHECK(rep.s == Approx(1.0).epsilon(1e-12));
    // the sweep's last threshold (1.0) binarizes to an empty map
    double e_ref = 0;
    for (const auto& smp : ds.samples) e_ref += oracle::e_mean(smp.gt.to_vector(), smp.gt.to_vector()) / 5;
    CHECK(rep.e == Approx(e_ref).epsilon(1e-12));
    CHECK(rep.e > 1.0 - 1.0 / 256);
    CHECK(rep.entropy == Approx(0.0).epsilon(1e-5));
  }
  SUBCASE("deterministic head ignores the sample count") {
    TrainConfig cfg;
    cfg.head = "deterministic";
    cfg.model.image_size = 32;
    cfg.seed = 3;
    Model m(cfg);
    auto a = evaluate_dataset(model_predictor(m, 1, 7), ds);
    auto b = evaluate_dataset(model_predictor(m, 10, 7), ds);
    CHECK(a.to_json() == b.to_json());
    double hand = 0;
    for (const auto& im : a.images) hand += im.s;
    CHECK(a.s == Approx(hand / 5).epsilon(1e-14));
  }
  SUBCASE("generative head is reproducible for a fixed seed") {
    TrainConfig cfg;
    cfg.head = "igan";
    cfg.model.image_size = 32;
    Model m(cfg);
    auto a = evaluate_dataset(model_predictor(m, 3, 7), ds, {3, nullptr});
    auto b = evaluate_dataset(model_predictor(m, 3, 7), ds, {5, nullptr});
    CHECK(a.to_json() == b.to_json());
    for (const auto& im : a.images) CHECK((im.entropy >= 0.0 && im.entropy <= std::log(2.0)));
  }
  SUBCASE("non-finite predictions are skipped") {
    Predictor bad = [](const Batch& b, const std::vector<std::size_t>& idx) {
      Uncertainty u{b.gt.clone(), Tensor::zeros(b.gt.shape())};
      if (idx[0] == 0) u.mean.mutable_data()[0] = std::nan("");
      return u;
    };
    auto rep = evaluate_dataset(bad, ds, {1, nullptr});
    CHECK(rep.count == 4);
    REQUIRE(rep.skipped.size() == 1);
    CHECK(rep.skipped[0].first == ds.samples[0].id);
  }
}
