#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "salgen/inference.hpp"
#include "salgen/ops.hpp"
#include "support.hpp"

using namespace salgen;
using doctest::Approx;

namespace {

std::vector<Rng> streams(std::uint64_t base, int n) {
  std::vector<Rng> out;
  for (int i = 0; i < n; ++i) out.push_back(Rng::for_stream(base, static_cast<std::uint64_t>(i)));
  return out;
}

// y-shaped output [N,1,2,2] built from h [N,K] through fixed weights.
struct ToyModel {
  Tensor w;  // [K,4]
  Tensor b;  // [4]
  Tensor operator()(const Tensor& h) const { return reshape(add(matmul(h, w), b), {h.dim(0), 1, 2, 2}); }
};

}  // namespace

TEST_CASE("log-joint gradient") {
  Rng r(1);
  Tensor y = r.rand({3, 1, 2, 2});
  SUBCASE("model independent of h pulls towards the prior mean") {
    LatentModel m = [&](const Tensor& h) { return Tensor::full({h.dim(0), 1, 2, 2}, 0.3); };
    Tensor h = r.randn({3, 2});
    Tensor g = log_joint_grad(m, y, h, 0.3);
    for (int i = 0; i < 6; ++i) CHECK(g.data()[i] == -h.data()[i]);
    Tensor g0 = log_joint_grad(m, y, Tensor::zeros({3, 2}), 0.3);
    for (double v : g0.data()) CHECK(v == 0.0);
  }
  SUBCASE("matches central differences of the log-joint") {
    ToyModel toy{r.randn({2, 4}), r.randn({4})};
    LatentModel m = [&](const Tensor& h) { return toy(h); };
    for (Link link : {Link::sigmoid, Link::identity}) {
      Tensor h = r.randn({3, 2});
      std::vector<double> vals;
      Tensor g = log_joint_grad(m, y, h, 0.3, link, Tensor(), &vals);
      auto direct = log_joint(m, y, h, 0.3, link);
      for (int c = 0; c < 3; ++c) CHECK(vals[c] == Approx(direct[c]).epsilon(1e-12));
      const double eps = 1e-6;
      for (int i = 0; i < 6; ++i) {
        Tensor hp = h.clone(), hm = h.clone();
        hp.mutable_data()[i] += eps;
        hm.mutable_data()[i] -= eps;
        int row = i / 2;
        double fd = (log_joint(m, y, hp, 0.3, link)[row] - log_joint(m, y, hm, 0.3, link)[row]) / (2 * eps);
        CHECK(std::abs(g.data()[i] - fd) / (std::abs(g.data()[i]) + 1e-12) <= 1e-4);
      }
    }
  }
  SUBCASE("sigmoid form of the data term") {
    ToyModel toy{r.randn({2, 4}), r.randn({4})};
    LatentModel m = [&](const Tensor& h) { return toy(h); };
    Tensor h = r.randn({1, 2});
    Tensor y1 = r.rand({1, 1, 2, 2});
    Tensor g = log_joint_grad(m, y1, h, 0.3);
    // (1/s2) sum_j (y_j - p_j) p_j (1 - p_j) W_kj - h_k
    Tensor f = toy(h);
    for (int k = 0; k < 2; ++k) {
      double acc = 0;
      for (int j = 0; j < 4; ++j) {
        double p = 1 / (1 + std::exp(-f.data()[j]));
        acc += (y1.data()[j] - p) * p * (1 - p) * toy.w.data()[k * 4 + j];
      }
      CHECK(g.data()[k] == Approx(acc / 0.3 - h.data()[k]).epsilon(1e-10));
    }
  }
  SUBCASE("non-finite gradient is rejected") {
    LatentModel m = [&](const Tensor& h) { return reshape(log(h - 10.0), {h.dim(0), 1, 1, 1}) * Tensor::ones({1, 1, 2, 2}); };
    CHECK_THROWS_AS(log_joint_grad(m, y, Tensor::zeros({3, 1}), 0.3), LangevinError);
  }
}

TEST_CASE("Langevin fixed points and validation") {
  Rng r(2);
  Tensor y = r.rand({2, 1, 2, 2});
  ToyModel toy{r.randn({3, 4}), r.randn({4})};
  LatentModel m = [&](const Tensor& h) { return toy(h); };
  LangevinConfig cfg;
  cfg.step_size = 0.0;
  auto rngs = streams(5, 2);
  Tensor h0 = r.randn({2, 3});
  auto st = langevin_infer(m, y, cfg, rngs, 3, h0);
  CHECK(testutil::bit_equal(st.h, h0));

  LatentModel flat = [&](const Tensor& h) { return Tensor::full({h.dim(0), 1, 2, 2}, 0.0); };
  cfg.step_size = 0.1;
  cfg.steps = 0;
  rngs = streams(5, 2);
  CHECK(testutil::bit_equal(langevin_infer(flat, y, cfg, rngs, 3, h0).h, h0));

  LangevinConfig bad;
  bad.sigma2 = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = LangevinConfig{};
  bad.step_size = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("Langevin chains are reproducible and independent per row") {
  Rng r(3);
  ToyModel toy{r.randn({2, 4}), r.randn({4})};
  LatentModel m = [&](const Tensor& h) { return toy(h); };
  Tensor y = r.rand({3, 1, 2, 2});
  LangevinConfig cfg;
  auto a = streams(9, 3), b = streams(9, 3);
  auto sa = langevin_infer(m, y, cfg, a, 2), sb = langevin_infer(m, y, cfg, b, 2);
  CHECK(testutil::bit_equal(sa.h, sb.h));
  CHECK(sa.seeds == std::vector<std::uint64_t>{9, 8, 11});
  // the first row alone follows the same chain
  std::vector<Rng> one{Rng::for_stream(9, 0)};
  auto s1 = langevin_infer(m, slice(y, 0, 0, 1), cfg, one, 2);
  CHECK(s1.h.data()[0] == sa.h.data()[0]);
  CHECK(s1.h.data()[1] == sa.h.data()[1]);
}

TEST_CASE("more Langevin steps move the chain mean towards the conjugate posterior") {
  const int k = 2, mdim = 6;
  const double s2 = 0.3;
  Rng r(4);
  Tensor a = r.randn({k, mdim}), b = r.randn({mdim}, 0.5);
  Tensor y = r.randn({1, 1, 1, mdim});
  Eigen::MatrixXd A(mdim, k);
  Eigen::VectorXd bv(mdim), yv(mdim);
  for (int j = 0; j < mdim; ++j) {
    for (int i = 0; i < k; ++i) A(j, i) = a.data()[i * mdim + j];
    bv(j) = b.data()[j];
    yv(j) = y.data()[j];
  }
  Eigen::MatrixXd prec = A.transpose() * A / s2 + Eigen::MatrixXd::Identity(k, k);
  Eigen::VectorXd post_mean = prec.ldlt().solve(A.transpose() * (yv - bv) / s2);

  const int chains = 20, seeds = 20;
  Tensor ys = y * Tensor::ones({chains, 1, 1, 1});
  LatentModel model = [&](const Tensor& h) { return reshape(add(matmul(h, a), b), {h.dim(0), 1, 1, mdim}); };
  std::vector<double> dist;
  for (int t : {1, 2, 4, 8}) {
    double total = 0;
    for (int s = 0; s < seeds; ++s) {
      LangevinConfig cfg;
      cfg.step_size = 0.1;
      cfg.sigma2 = s2;
      cfg.steps = t;
      auto rngs = streams(derive_seed(40, static_cast<std::uint64_t>(s)), chains);
      auto st = langevin_infer(model, ys, cfg, rngs, k, Tensor(), Link::identity);
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
      for (int c = 0; c < chains; ++c) {
        for (int i = 0; i < k; ++i) mean(i) += st.h.data()[c * k + i] / chains;
      }
      total += (mean - post_mean).norm();
    }
    dist.push_back(total / seeds);
  }
  for (std::size_t i = 1; i < dist.size(); ++i) CHECK(dist[i] < dist[i - 1]);
}

TEST_CASE("divergent chains are flagged and dumped") {
  LatentModel m = [](const Tensor& h) { return reshape(h, {h.dim(0), 1, 1, 1}); };
  Tensor y = Tensor::from({2, 1, 1, 1}, {1e4, 0.0});
  LangevinConfig cfg;
  cfg.step_size = 1.0;
  cfg.divergence_threshold = 10.0;
  cfg.record_trajectory = true;
  auto rngs = streams(6, 2);
  auto st = langevin_infer(m, y, cfg, rngs, 1, Tensor::zeros({2, 1}), Link::identity);
  CHECK(st.diverged[0]);
  CHECK_FALSE(st.diverged[1]);
  CHECK(st.any_diverged());
  CHECK(st.trajectory[0].size() < st.trajectory[1].size());
  std::ostringstream os;
  dump_trajectory(st, os);
  CHECK(os.str().find("\"diverged\":true") != std::string::npos);
  std::size_t lines = 0;
  for (char ch : os.str()) lines += ch == '\n';
  CHECK(lines == st.trajectory[0].size() + st.trajectory[1].size());
}

TEST_CASE("prior sampling") {
  Rng r(7);
  Tensor h = sample_prior(1, r, 100000);
  double m = 0, v = 0;
  for (double x : h.data()) m += x;
  m /= 1e5;
  for (double x : h.data()) v += (x - m) * (x - m);
  v /= 1e5;
  CHECK(std::abs(m) < 0.02);
  CHECK(std::abs(v - 1.0) < 0.05);
  Rng a(8), b(8);
  CHECK(testutil::bit_equal(sample_prior(5, a), sample_prior(5, b)));
  CHECK_THROWS_AS(sample_prior(0, a), std::invalid_argument);
}

TEST_CASE("predictive uncertainty") {
  Tensor e = binary_entropy(Tensor::from({3}, {0.5, 0.0, 1.0}));
  CHECK(e.data()[0] == Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(e.data()[1] < 1e-5);
  CHECK(e.data()[2] < 1e-5);

  Rng r(9);
  Tensor logits = r.randn({2, 1, 4, 4});
  LatentModel ignore = [&](const Tensor&) { return logits; };
  auto u = predictive_uncertainty(ignore, 3, 2, 10, r);
  CHECK(testutil::bit_equal(u.mean, sigmoid(logits)));
  CHECK(testutil::bit_equal(u.entropy, binary_entropy(sigmoid(logits))));

  ToyModel toy{r.randn({3, 4}, 2.0), r.randn({4})};
  LatentModel m = [&](const Tensor& h) { return toy(h); };
  auto v = predictive_uncertainty(m, 3, 2, 10, r);
  for (double x : v.entropy.data()) CHECK((x >= 0.0 && x <= std::log(2.0)));

  auto same = stable_mean({{0.1, 0.7}, {0.1, 0.7}, {0.1, 0.7}});
  CHECK(same == std::vector<double>{0.1, 0.7});
  CHECK(stable_mean({{0.0, 1.0}, {1.0, 0.0}})[0] == Approx(0.5));
}
