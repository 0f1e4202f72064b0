#include "c3r/app.hpp"

#include <filesystem>
#include <fstream>

#include "c3r/synth.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace c3r;
using namespace c3r::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "c3r");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return app::run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("ablation toggles resolve to encoder configs") {
  const auto schema = hpa_schema();
  const json enc = {{"embed_dim", 64}, {"heads", 4}, {"image_size", 32}, {"patch_size", 8}};

  const auto base = app::resolve_model({false, false, false, false}, enc, 3, true, schema, {});
  CHECK(base.encoder.arch == Architecture::Baseline);
  CHECK(count_parameters(base.encoder).total() == count_parameters(baseline_config(base.encoder, 3)).total());
  CHECK(base.drop.mode == DropMode::None);

  const auto full = app::resolve_model({true, true, true, true}, enc, 3, true, schema, {});
  CHECK(full.encoder.arch == Architecture::CCE);
  CHECK(full.encoder.instance_norm);
  CHECK(full.encoder.aggregation == Aggregation::Post);
  CHECK(full.drop.mode == DropMode::UniformStudent);
  CHECK(full.drop.c == 2);
  CHECK(count_parameters(full.encoder).total() <= count_parameters(baseline_config(full.encoder, 3)).total());

  const auto gc = app::resolve_model({true, false, false, false}, enc, 3, false, schema, {});
  CHECK(gc.encoder.branch_depth == 0);
  CHECK_FALSE(gc.encoder.instance_norm);
  CHECK(gc.encoder.aggregation == Aggregation::Pre);

  CHECK_THROWS_AS(app::resolve_model({false, true, false, false}, enc, 3, true, schema, {}), ConfigError);
  CHECK_THROWS_AS(app::resolve_model({true, true, true, false}, enc, 3, true, schema, {DropMode::FixedStudent, 1}),
                  ConfigError);
  CHECK_THROWS_AS(app::resolve_model({true, true, true, true}, json{{"arch", "cce"}}, 3, true, schema, {}), ConfigError);
  CHECK_THROWS_AS(app::resolve_model({true, true, false, true}, json{{"branch_depth", 2}}, 3, true, schema, {}),
                  ConfigError);
  CHECK(app::Ablation{true, true, true, true}.label() == "+GC+IN+B+MCD");
}

TEST_CASE("command line pipeline and exit codes") {
  const auto root = fs::temp_directory_path() / "c3r_cli_test";
  fs::remove_all(root);
  fs::create_directories(root);
  auto write = [&](const std::string& name, const json& j) {
    std::ofstream(root / name) << j.dump();
    return (root / name).string();
  };
  const auto gen = write("gen.json", {{"synth", {{"n_samples", 32}, {"image_size", 16}}}});
  CHECK(run({"gen", "--config", gen, "--out", (root / "data").string()}) == app::kExitOk);

  const auto train = write("train.json", {{"dataset", (root / "data").string()},
                                          {"encoder", {{"embed_dim", 16}, {"image_size", 16}, {"patch_size", 8}}},
                                          {"baseline_depth", 2},
                                          {"train",
                                           {{"steps", 2},
                                            {"batch_groups", 2},
                                            {"per_group", 2},
                                            {"local_crops", 0},
                                            {"global_crop", {{"size", 16}}},
                                            {"local_crop", {{"size", 8}}},
                                            {"head", {{"hidden_dim", 16}, {"bottleneck_dim", 8}, {"prototypes", 16}}}}}});
  CHECK(run({"train", "--config", train, "--out", (root / "run").string(), "--seed", "3"}) == app::kExitOk);
  CHECK(fs::exists(root / "run" / "checkpoint.c3r"));
  CHECK(fs::exists(root / "run" / "metrics.jsonl"));
  CHECK(fs::exists(root / "run" / "config.json"));

  const auto ev = write("eval.json", {{"checkpoint", (root / "run" / "checkpoint.c3r").string()},
                                      {"dataset", (root / "data").string()},
                                      {"tasks", {"retrieval", "cosine"}},
                                      {"retrieval_level", "cell"}});
  CHECK(run({"eval", "--config", ev, "--out", (root / "eval").string(), "--drop", "Nucleus"}) == app::kExitOk);
  std::ifstream rep(root / "eval" / "report.json");
  const auto report = json::parse(rep);
  CHECK(report.contains("retrieval"));
  CHECK(report.contains("cosine"));

  CHECK(run({"embed", "--config", ev, "--out", (root / "bad")}) == app::kExitConfig);
  CHECK(run({"eval", "--config", ev, "--out", (root / "bad2").string(), "--drop", "Protein"}) == app::kExitConfig);
  CHECK(run({"train", "--config", (root / "nope.json").string(), "--out", (root / "x").string()}) == app::kExitConfig);
  CHECK(run({"frobnicate"}) == app::kExitConfig);
  CHECK(run({"plot", "--out", (root / "plots").string(), (root / "eval" / "report.json").string(),
             (root / "run" / "metrics.jsonl").string()}) == app::kExitOk);
  fs::remove_all(root);
}
