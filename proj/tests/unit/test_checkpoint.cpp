#include "c3r/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_support.hpp"

using namespace c3r;
using namespace c3r::testing;
namespace fs = std::filesystem;

TEST_CASE("checkpoint round trip preserves weights, schema and provenance") {
  EncoderConfig c;
  c.embed_dim = 16;
  c.shared_depth = 1;
  c.image_size = 16;
  c.aggregation = Aggregation::Post;
  const Encoder enc(c, hpa_schema(), 3);
  const auto path = (fs::temp_directory_path() / "c3r_ckpt_test.c3r").string();
  Provenance p;
  p.git_hash = "abc123";
  p.seed = 7;
  p.step = 200;
  p.epoch = 3;
  p.extra = {{"ablation", "+GC+IN+B+MCD"}};
  save_checkpoint(path, enc, p);
  const auto ck = load_checkpoint(path);
  CHECK(ck.schema == enc.schema());
  CHECK(to_json(ck.config) == to_json(c));
  CHECK(ck.provenance.git_hash == "abc123");
  CHECK(ck.provenance.seed == 7);
  CHECK(ck.provenance.step == 200);
  CHECK(ck.provenance.extra["ablation"] == "+GC+IN+B+MCD");
  const auto back = ck.encoder();
  for (size_t i = 0; i < enc.params().size(); ++i) CHECK(back.params().vars()[i]->value == enc.params().vars()[i]->value);

  Rng rng(0);
  const Tensor x = random_tensor({2, 4, 16, 16}, rng);
  CHECK(back.forward(x).cls->value == enc.forward(x).cls->value);
  fs::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto path = (fs::temp_directory_path() / "c3r_bad.c3r").string();
  std::ofstream(path) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
  CHECK(!build_git_hash().empty());
}
