#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "salgen/checkpoint.hpp"
#include "salgen/optim.hpp"
#include "support.hpp"

using namespace salgen;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

// one step on 0.5 * sum(w^2): grad = w
void quad_step(Optimizer& opt, ParamStore& ps) {
  ps.zero_grad();
  Tensor& w = ps.get("w");
  backward(sum(square(w)) * 0.5);
  opt.step(ps);
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("salgen_test_" + name); }

}  // namespace

TEST_CASE("AdamW first step on a scalar quadratic") {
  ParamStore ps;
  ps.add("w", Tensor::from({1}, {1.0}, true));
  AdamW opt({"adamw", 0.1, 0.9, 0.999, 1e-8, 0.0, 0.9});
  quad_step(opt, ps);
  CHECK(ps.get("w").item() == Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  quad_step(opt, ps);
  // hand-stepped second update
  double g1 = 1.0, g2 = 1.0 - 0.1 / (1.0 + 1e-8);
  double m = 0.9 * 0.1 * g1 + 0.1 * g2, v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  double expect = g2 - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(ps.get("w").item() == Approx(expect).epsilon(1e-13));
}

TEST_CASE("AdamW decoupled weight decay") {
  ParamStore ps;
  ps.add("w", Tensor::from({1}, {2.0}, true));
  AdamW opt({"adamw", 0.1, 0.9, 0.999, 1e-8, 0.5, 0.9});
  ps.get("w").mutable_grad()[0] = 0.0;
  opt.step(ps);
  CHECK(ps.get("w").item() == Approx(2.0 * (1 - 0.05)).epsilon(1e-14));
}

TEST_CASE("SGD momentum follows the heavy-ball recursion") {
  ParamStore ps;
  ps.add("w", Tensor::from({2}, {1.0, -3.0}, true));
  SgdMomentum opt({"sgd", 0.1, 0.9, 0.999, 1e-8, 0.0, 0.9});
  double w[2] = {1.0, -3.0}, v[2] = {0.0, 0.0};
  for (int s = 0; s < 5; ++s) {
    quad_step(opt, ps);
    for (int i = 0; i < 2; ++i) {
      v[i] = 0.9 * v[i] + w[i];
      w[i] -= 0.1 * v[i];
      CHECK(ps.get("w").data()[i] == Approx(w[i]).epsilon(1e-14));
    }
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("zero gradient without decay is a fixed point") {
  for (const char* kind : {"adamw", "sgd"}) {
    ParamStore ps;
    Rng r(1);
    ps.add("w", r.randn({3, 3}, 1.0, true));
    Tensor before = ps.get("w").clone();
    auto opt = make_optimizer({kind, 0.1, 0.9, 0.999, 1e-8, 0.0, 0.9});
    for (int s = 0; s < 3; ++s) {
      ps.get("w").zero_grad();
      ps.get("w").mutable_grad();
      opt->step(ps);
    }
    CHECK(testutil::bit_equal(ps.get("w"), before));
  }
}

TEST_CASE("missing gradient on a tracked parameter is rejected") {
  ParamStore ps;
  ps.add("a", Tensor::from({1}, {1.0}, true));
  ps.add("b", Tensor::from({1}, {2.0}, true));
  ps.get("a").mutable_grad()[0] = 1.0;
  AdamW opt({"adamw", 0.1, 0.9, 0.999, 1e-8, 0.0, 0.9});
  CHECK_THROWS_AS(opt.step(ps), std::logic_error);
  CHECK(ps.get("a").item() == 1.0);
  // frozen parameters are skipped
  ps.get("b").set_requires_grad(false);
  CHECK_NOTHROW(opt.step(ps));
  CHECK(ps.get("b").item() == 2.0);
}

TEST_CASE("optimizer config validation") {
  CHECK_THROWS_AS(make_optimizer({"rmsprop", 0.1, 0.9, 0.999, 1e-8, 0.0, 0.9}), std::invalid_argument);
  CHECK_THROWS_AS(make_optimizer({"adamw", -1.0, 0.9, 0.999, 1e-8, 0.0, 0.9}), std::invalid_argument);
  CHECK_THROWS_AS(make_optimizer({"adamw", 0.1, 1.0, 0.999, 1e-8, 0.0, 0.9}), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  Rng r(2);
  Checkpoint ck;
  ck.meta["note"] = "hello";
  ck.put("a", r.randn({2, 3}));
  ck.put("s", Tensor::scalar(0.1));
  ParamStore ps;
  ps.add("w", r.randn({4}));
  ck.put("net.", ps);
  auto path = temp_file("round.ckpt");
  save_checkpoint(path.string(), ck);
  Checkpoint back = load_checkpoint(path.string());
  CHECK(back.meta == ck.meta);
  CHECK(testutil::bit_equal(back.get("a"), ck.get("a")));
  CHECK(back.get("s").item() == 0.1);
  ParamStore other;
  other.add("w", Tensor::zeros({4}));
  restore_params(other, back, "net.");
  CHECK(testutil::bit_equal(other.get("w"), ps.get("w")));

  SUBCASE("float32 storage rounds values") {
    save_checkpoint(path.string(), ck, true);
    Checkpoint f = load_checkpoint(path.string());
    for (std::int64_t i = 0; i < 6; ++i) {
      CHECK(f.get("a").data()[i] == static_cast<double>(static_cast<float>(ck.get("a").data()[i])));
    }
  }
  SUBCASE("missing and mismatched parameters") {
    ParamStore extra;
    extra.add("w", Tensor::zeros({4}));
    extra.add("v", Tensor::zeros({1}));
    CHECK_THROWS_AS(restore_params(extra, back, "net."), CheckpointError);
    ParamStore wrong;
    wrong.add("w", Tensor::zeros({5}));
    CHECK_THROWS_AS(restore_params(wrong, back, "net."), CheckpointError);
  }
  SUBCASE("corrupt files") {
    {
      std::ofstream os(path, std::ios::binary);
      os << "NOPE and some bytes";
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointError);
    save_checkpoint(path.string(), ck);
    fs::resize_file(path, fs::file_size(path) - 5);
    CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint((path.string() + ".absent")), CheckpointError);
  }
  fs::remove(path);
}

TEST_CASE("optimizer state survives a checkpoint") {
  for (const char* kind : {"adamw", "sgd"}) {
    OptimConfig cfg{kind, 0.05, 0.9, 0.999, 1e-8, 0.01, 0.9};
    ParamStore a;
    a.add("w", Tensor::from({2}, {1.0, 2.0}, true));
    auto oa = make_optimizer(cfg);
    for (int s = 0; s < 3; ++s) quad_step(*oa, a);

    Checkpoint ck;
    ck.put("", a);
    oa->save_state(ck, "gen");
    auto path = temp_file("optim.ckpt");
    save_checkpoint(path.string(), ck);
    Checkpoint back = load_checkpoint(path.string());
    fs::remove(path);

    ParamStore b;
    b.add("w", Tensor::zeros({2}, true));
    restore_params(b, back);
    auto ob = make_optimizer(cfg);
    ob->load_state(back, "gen", b);
    CHECK(ob->steps() == 3);
    for (int s = 0; s < 3; ++s) {
      quad_step(*oa, a);
      quad_step(*ob, b);
    }
    CHECK(testutil::bit_equal(a.get("w"), b.get("w")));
  }
}
