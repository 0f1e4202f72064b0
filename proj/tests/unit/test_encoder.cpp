#include "c3r/encoder.hpp"

#include "c3r/stems.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace c3r;
using namespace c3r::testing;

namespace {

int64_t oracle_block(int64_t dim, int64_t hidden) {
  const int64_t norm1 = 2 * dim, norm2 = 2 * dim;
  const int64_t qkv = dim * 3 * dim + 3 * dim, proj = dim * dim + dim;
  const int64_t fc1 = dim * hidden + hidden, fc2 = hidden * dim + dim;
  return norm1 + qkv + proj + norm2 + fc1 + fc2;
}

int64_t oracle_total(const EncoderConfig& c) {
  const int64_t D = c.embed_dim, p2 = static_cast<int64_t>(c.patch_size) * c.patch_size;
  const int64_t N = static_cast<int64_t>(c.image_size / c.patch_size) * (c.image_size / c.patch_size);
  const int64_t H = static_cast<int64_t>(c.mlp_ratio * D);
  const int64_t trunk = c.shared_depth * oracle_block(D, H) + 2 * D;
  if (c.arch == Architecture::Baseline) return (c.in_channels * p2 * D + D) + N * D + D + D + D + trunk;
  const int64_t d = D / 2, h = static_cast<int64_t>(c.mlp_ratio * d);
  return 2 * (p2 * d + d) + 2 * N * d + 2 * d + 2 * c.branch_depth * oracle_block(d, h) + 2 * D + D + trunk;
}

EncoderConfig toy(Aggregation agg = Aggregation::Pre) {
  EncoderConfig c;
  c.embed_dim = 16;
  c.heads = 4;
  c.branch_depth = 1;
  c.shared_depth = 1;
  c.patch_size = 8;
  c.image_size = 16;
  c.aggregation = agg;
  return c;
}

Tensor swap_channels(Tensor x, int64_t a, int64_t b) {
  const int64_t C = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (int64_t s = 0; s < x.dim(0); ++s)
    for (int64_t i = 0; i < plane; ++i) std::swap(x[(s * C + a) * plane + i], x[(s * C + b) * plane + i]);
  return x;
}

}  // namespace

TEST_CASE("parameter counts match the closed-form oracle and runtime enumeration") {
  for (int D : {16, 64, 384})
    for (int bd : {0, 1, 2})
      for (auto arch : {Architecture::CCE, Architecture::Baseline}) {
        EncoderConfig c;
        c.arch = arch;
        c.embed_dim = D;
        c.heads = 4;
        c.branch_depth = arch == Architecture::CCE ? bd : 0;
        c.shared_depth = 2;
        c.patch_size = 8;
        c.image_size = 32;
        CHECK(count_parameters(c).total() == oracle_total(c));
        if (D <= 64) CHECK(init_encoder_params(c, 0).numel() == oracle_total(c));
      }
}

TEST_CASE("half-width layer parameter ratio") {
  for (int D : {64, 384}) {
    const double ratio = static_cast<double>(nn::block_param_count(D / 2, 4.0)) / nn::block_param_count(D, 4.0);
    const double expected = (12.0 * D * D / 4 + 13.0 * D / 2) / (12.0 * D * D + 13.0 * D);
    CHECK(ratio == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(ratio - 0.25) < 0.01);
  }
}

TEST_CASE("branch-free CCE differs from the baseline only in stem-side terms") {
  EncoderConfig c;
  c.embed_dim = 384;
  c.heads = 6;
  c.branch_depth = 0;
  c.shared_depth = 12;
  c.patch_size = 16;
  c.image_size = 224;
  const auto cce = count_parameters(c);
  const auto base = count_parameters(baseline_config(c, 12));
  CHECK(cce.trunk == base.trunk);
  CHECK(cce.final_norm == base.final_norm);
  CHECK(cce.total() - base.total() == (cce.stems + cce.positional + cce.tokens + cce.fusion_norm) -
                                          (base.stems + base.positional + base.tokens + base.fusion_norm));
}

TEST_CASE("ViT-S-like configuration normalises to 10 or 11 shared layers") {
  EncoderConfig c;
  c.embed_dim = 384;
  c.heads = 6;
  c.branch_depth = 2;
  c.patch_size = 16;
  c.image_size = 224;
  const int depth = normalized_shared_depth(12, c);
  CHECK((depth == 10 || depth == 11));
}

TEST_CASE("toy forward shapes") {
  EncoderConfig c;
  c.embed_dim = 64;
  c.heads = 4;
  c.branch_depth = 1;
  c.shared_depth = 2;
  c.patch_size = 16;
  c.image_size = 32;
  const Encoder enc(c, hpa_schema(), 0);
  Rng rng(0);
  const auto out = enc.forward(random_tensor({3, 4, 32, 32}, rng));
  CHECK(out.cls->value.shape() == Shape{3, 64});
  CHECK(out.patches->value.shape() == Shape{3, 4, 64});
  CHECK(out.context_branch->value.shape() == Shape{3, 4, 32});
}

TEST_CASE("within-group permutation invariance") {
  for (auto agg : {Aggregation::Pre, Aggregation::Post}) {
    const Encoder enc(toy(agg), hpa_schema(), 1);
    Rng rng(2);
    const Tensor x = random_tensor({2, 4, 16, 16}, rng);
    const auto a = enc.forward(x).cls->value;
    const auto b = enc.forward(swap_channels(x, 0, 2)).cls->value;
    const auto c = enc.forward(swap_channels(x, 1, 2)).cls->value;
    CHECK(max_abs_diff(a, b) <= 1e-5);
    CHECK(max_abs_diff(a, c) <= 1e-5);
    CHECK(max_abs_diff(a, enc.forward(swap_channels(x, 0, 3)).cls->value) > 1e-5);
  }
}

TEST_CASE("single-channel groups make pre and post aggregation identical") {
  const auto schema = parse_schema("name=a role=context index=0\nname=b role=concept index=1\n");
  const Encoder pre(toy(Aggregation::Pre), schema, 3);
  const Encoder post(toy(Aggregation::Post), schema, pre.params());
  Rng rng(4);
  const Tensor x = random_tensor({2, 2, 16, 16}, rng);
  CHECK(max_abs_diff(pre.forward(x).cls->value, post.forward(x).cls->value) <= 1e-6);
}

TEST_CASE("branch building blocks") {
  ParamStore ps;
  Rng rng(5);
  nn::init_block(ps, "b.0", 8, 4.0, rng);
  nn::init_block(ps, "b.1", 8, 4.0, rng);
  const Tensor t = random_tensor({2, 1, 3, 8}, rng);

  SUBCASE("empty branch returns pooled tokens") {
    const Tensor two = concat_axis1(std::vector<Tensor>{t, random_tensor({2, 1, 3, 8}, rng)});
    const auto out = branch_encode_pre(ag::constant(two), ps, "b", 0, 2)->value;
    CHECK(max_abs_diff(out, ag::mean_axis1(ag::constant(two))->value) == 0.0);
  }
  SUBCASE("singleton group is pooling-order independent") {
    CHECK(max_abs_diff(branch_encode_pre(ag::constant(t), ps, "b", 2, 2)->value,
                       branch_encode_post(ag::constant(t), ps, "b", 2, 2)->value) <= 1e-12);
  }
  SUBCASE("duplicated channel matches single channel") {
    const Tensor dup = concat_axis1(std::vector<Tensor>{t, t});
    for (auto fn : {branch_encode_pre, branch_encode_post})
      CHECK(max_abs_diff(fn(ag::constant(dup), ps, "b", 2, 2)->value, fn(ag::constant(t), ps, "b", 2, 2)->value) <= 1e-12);
  }
  SUBCASE("distinct channels separate pre from post") {
    const Tensor two = concat_axis1(std::vector<Tensor>{t, random_tensor({2, 1, 3, 8}, rng, -3, 3)});
    CHECK(max_abs_diff(branch_encode_pre(ag::constant(two), ps, "b", 1, 2)->value,
                       branch_encode_post(ag::constant(two), ps, "b", 1, 2)->value) > 1e-3);
  }
}

TEST_CASE("fusion layer") {
  ParamStore ps;
  nn::init_layer_norm(ps, "fuse.norm", 8);
  ps.add("cls_token", Tensor({8}, 0.5));
  Rng rng(6);
  ps.get("fuse.norm.bias")->value = random_tensor({8}, rng);

  const auto zero = fuse(ag::constant(Tensor({2, 3, 4})), ag::constant(Tensor({2, 3, 4})), ps)->value;
  CHECK(zero.shape() == Shape{2, 4, 8});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t n = 1; n < 4; ++n)
      for (int64_t k = 0; k < 8; ++k) CHECK(zero.at({b, n, k}) == doctest::Approx(ps.get("fuse.norm.bias")->value[k]));

  ps.get("fuse.norm.bias")->value.fill(0.0);
  const Tensor a = random_tensor({1, 2, 4}, rng), b = random_tensor({1, 2, 4}, rng);
  const auto ab = fuse(ag::constant(a), ag::constant(b), ps)->value;
  const auto ba = fuse(ag::constant(b), ag::constant(a), ps)->value;
  for (int64_t n = 1; n < 3; ++n)
    for (int64_t k = 0; k < 4; ++k) {
      CHECK(ab.at({0, n, k}) == doctest::Approx(ba.at({0, n, k + 4})));
      CHECK(ab.at({0, n, k + 4}) == doctest::Approx(ba.at({0, n, k})));
    }
}

TEST_CASE("flip re-routes groups through the opposite branch") {
  const Encoder enc(toy(), hpa_schema(), 7);
  Rng rng(8);
  const Tensor x = random_tensor({2, 4, 16, 16}, rng);
  const auto plain = enc.forward(x).cls->value;
  ForwardOptions o;
  o.flip_groups = true;
  CHECK(max_abs_diff(plain, enc.forward(x, o).cls->value) > 1e-6);
  CHECK(max_abs_diff(plain, enc.forward(x).cls->value) == 0.0);
}

TEST_CASE("baseline encoder forward and channel checks") {
  auto c = baseline_config(toy(), 2);
  CHECK(c.arch == Architecture::Baseline);
  const Encoder enc(c, hpa_schema(), 0);
  Rng rng(9);
  CHECK(enc.forward(random_tensor({2, 4, 16, 16}, rng)).cls->value.shape() == Shape{2, 16});
  CHECK_THROWS_AS(enc.forward(random_tensor({2, 3, 16, 16}, rng)), ShapeError);
  c.in_channels = 3;
  CHECK_THROWS_AS(Encoder(c, hpa_schema(), 0), ConfigError);
}

TEST_CASE("encoder config validation and JSON") {
  auto bad = [](auto mutate) {
    EncoderConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](EncoderConfig& c) { c.embed_dim = 63; });
  bad([](EncoderConfig& c) { c.heads = 3; });
  bad([](EncoderConfig& c) { c.shared_depth = 0; });
  bad([](EncoderConfig& c) { c.branch_depth = -1; });
  bad([](EncoderConfig& c) { c.image_size = 30; });
  bad([](EncoderConfig& c) { c.heads = 1; c.embed_dim = 8; });

  EncoderConfig c = toy(Aggregation::Post);
  CHECK(to_json(encoder_config_from_json(to_json(c))) == to_json(c));
  auto j = to_json(c);
  j["depth"] = 3;
  CHECK_THROWS_AS(encoder_config_from_json(j), ConfigError);
  j = to_json(c);
  j["aggregation"] = "middle";
  CHECK_THROWS_AS(encoder_config_from_json(j), ConfigError);
}

TEST_CASE("parameter store mismatch is rejected") {
  const Encoder enc(toy(), hpa_schema(), 0);
  auto other = toy();
  other.shared_depth = 2;
  CHECK_THROWS_AS(Encoder(other, hpa_schema(), enc.params()), ConfigError);
}
