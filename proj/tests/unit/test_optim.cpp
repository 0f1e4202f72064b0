#include "c3r/optim.hpp"

#include "c3r/augment.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace c3r;
using namespace c3r::testing;

TEST_CASE("AdamW first step against a hand computation") {
  ParamStore ps;
  auto w = ps.add("w", Tensor({2, 2}, 1.0));
  auto b = ps.add("b", Tensor({2}, 1.0));
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt(ps, cfg);
  w->grad = Tensor({2, 2}, 0.5);
  b->grad = Tensor({2}, -2.0);
  opt.step(ps, 0.01);
  // Bias-corrected first step moves each entry by lr * sign(g); decay applies to matrices only.
  const double expected_w = 1.0 - 0.01 * 0.1 * 1.0 - 0.01 * (0.5 / (0.5 + 1e-8));
  CHECK(w->value[0] == doctest::Approx(expected_w).epsilon(1e-12));
  CHECK(b->value[0] == doctest::Approx(1.0 + 0.01 * (2.0 / (2.0 + 1e-8))).epsilon(1e-12));
  CHECK_FALSE(w->has_grad());
  CHECK(opt.steps() == 1);
}

TEST_CASE("schedules") {
  CHECK(cosine_schedule(0, 100, 1.0, 0.0, 10) == doctest::Approx(0.1));
  CHECK(cosine_schedule(9, 100, 1.0, 0.0, 10) == doctest::Approx(1.0));
  CHECK(cosine_schedule(10, 100, 1.0, 0.0, 10) == doctest::Approx(1.0));
  CHECK(cosine_schedule(100, 100, 1.0, 0.1, 10) == doctest::Approx(0.1));
  CHECK(cosine_schedule(55, 100, 1.0, 0.0, 10) == doctest::Approx(0.5));
  CHECK(linear_warmup(5, 10, 0.0, 1.0) == doctest::Approx(0.5));
  CHECK(linear_warmup(20, 10, 0.0, 1.0) == 1.0);
}

TEST_CASE("gradient clipping") {
  ParamStore a, b;
  auto x = a.add("x", Tensor({1}, 0.0));
  auto y = b.add("y", Tensor({1}, 0.0));
  x->grad = Tensor({1}, 3.0);
  y->grad = Tensor({1}, 4.0);
  CHECK(clip_grad_norm({&a, &b}, 1.0) == doctest::Approx(5.0));
  CHECK(x->grad[0] == doctest::Approx(0.6));
  CHECK(y->grad[0] == doctest::Approx(0.8));
}

TEST_CASE("crops") {
  Rng rng(0);
  const CropConfig cfg{8, 0.3, 0.6};
  for (int i = 0; i < 100; ++i) {
    const auto c = sample_crop(32, 32, cfg, rng);
    CHECK(c.y0 >= 0);
    CHECK(c.x0 >= 0);
    CHECK(c.y0 + c.h <= 32 + 1e-9);
    CHECK(c.x0 + c.w <= 32 + 1e-9);
  }
  const Tensor x = random_tensor({2, 3, 16, 16}, rng);
  const auto full = crop_resize(x, 1, CropParams{0, 0, 16, 16, false, false}, 16);
  for (int64_t i = 0; i < 3 * 256; ++i) CHECK(full[i] == doctest::Approx(x[3 * 256 + i]));
  CHECK(random_resized_crops(x, cfg, rng).shape() == Shape{2, 3, 8, 8});
}
