#include <doctest.h>

#include "salgen/config.hpp"
#include "salgen/data.hpp"
#include "salgen/losses.hpp"
#include "salgen/trainer.hpp"

using namespace salgen;

namespace {

Dataset eight(std::uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  s.count = 8;
  s.size = 32;
  s.with_scribble = true;
  return synth_generate(s);
}

TrainConfig toy(const std::string& head, const std::string& regime) {
  TrainConfig c;
  c.head = head;
  c.regime = regime;
  c.batch_size = 4;
  c.epochs = 1000;
  c.max_steps = 500;
  c.seed = 2;
  c.model.image_size = 32;
  c.optimizer.lr = 1e-3;
  return c;
}

double component(const StepRecord& r, const std::string& name) {
  for (const auto& [n, v] : r.components) {
    if (n == name) return v;
  }
  FAIL("missing component " << name);
  return 0;
}

}  // namespace

TEST_CASE("iGAN reconstruction loss halves within 500 steps") {
  Dataset ds = eight(31);
  Trainer t(toy("igan", "rgb_full"), ds);
  t.run();
  const auto& h = t.history();
  REQUIRE(h.size() == 500);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += component(h[i], "structure") / 10;
    last += component(h[h.size() - 1 - i], "structure") / 10;
  }
  MESSAGE("structure loss, first 10 steps " << first << ", last 10 steps " << last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("weak regime fits the training scribbles") {
  Dataset ds = eight(32);
  Trainer t(toy("deterministic", "rgb_weak"), ds);
  t.run();
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Batch b = make_batch(ds, all);
  NoGradGuard ng;
  Tensor logits = t.model().gen.forward(t.model().input(b));
  double pce = partial_ce(logits, b.scribble).item();
  MESSAGE("partial CE on training scribbles " << pce);
  CHECK(pce < 0.05);
}
