#include "c3r/eval.hpp"

#include <filesystem>
#include <map>

#include "c3r/synth.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace c3r;
using namespace c3r::testing;

namespace {

/// AP with ranks from pairwise comparisons (ties go to the lower index).
double ap_oracle(const std::vector<double>& s, const std::vector<bool>& rel) {
  const size_t n = s.size();
  auto rank = [&](size_t i) {
    size_t r = 1;
    for (size_t j = 0; j < n; ++j)
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r;
    return r;
  };
  double sum = 0;
  int R = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!rel[i]) continue;
    ++R;
    const size_t ri = rank(i);
    size_t hits = 0;
    for (size_t j = 0; j < n; ++j)
      if (rel[j] && rank(j) <= ri) ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(ri);
  }
  return R ? sum / R : 0.0;
}

EmbeddingRecord rec(std::vector<double> v, int cls, int fov = 0, int well = 0) {
  EmbeddingRecord r;
  r.vector = std::move(v);
  r.class_id = cls;
  r.fov_id = fov;
  r.well_id = well;
  r.labels = {static_cast<uint8_t>(cls == 0), static_cast<uint8_t>(cls == 1)};
  return r;
}

std::vector<EmbeddingRecord> random_records(int n, int dim, int classes, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<EmbeddingRecord> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(static_cast<size_t>(dim));
    for (auto& x : v) x = g(rng);
    out.push_back(rec(v, i % classes));
  }
  return out;
}

const Dataset& small_data() {
  static const Dataset d = [] {
    SynthConfig s;
    s.n_samples = 32;
    s.image_size = 16;
    s.seed = 5;
    return generate(s);
  }();
  return d;
}

Encoder small_model(uint64_t seed = 0) {
  EncoderConfig c;
  c.embed_dim = 16;
  c.heads = 4;
  c.shared_depth = 1;
  c.patch_size = 8;
  c.image_size = 16;
  return Encoder(c, small_data().schema, seed);
}

}  // namespace

TEST_CASE("hand-enumerable four-point retrieval") {
  const std::vector<EmbeddingRecord> pts = {rec({1.0, 0.0}, 0), rec({0.8, 0.6}, 0), rec({0.6, 0.8}, 1), rec({0.0, 1.0}, 1)};
  // Per-query AP: 1, 1/2, 1/2, 1. Nearest neighbours: correct for queries 0 and 3.
  const auto r = retrieval_eval(pts, 1);
  CHECK(r.map == 0.75);
  CHECK(r.knn_accuracy == 0.5);
  CHECK(r.queries == 4);
}

TEST_CASE("average precision matches the pairwise-rank oracle") {
  Rng rng(1);
  std::uniform_int_distribution<int> score(0, 5), len(2, 12);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 50; ++t) {
    const int n = len(rng);
    std::vector<double> s(static_cast<size_t>(n));
    std::vector<bool> rel(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<size_t>(i)] = score(rng) * 0.25;
      rel[static_cast<size_t>(i)] = coin(rng);
    }
    rel[0] = true;
    CHECK(std::abs(average_precision(s, rel) - ap_oracle(s, rel)) <= 1e-9);
  }
}

TEST_CASE("retrieval mAP matches the oracle on random instances") {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto recs = random_records(9, 3, 3, rng);
    double total = 0;
    for (size_t q = 0; q < recs.size(); ++q) {
      std::vector<double> s;
      std::vector<bool> rel;
      for (size_t j = 0; j < recs.size(); ++j) {
        if (j == q) continue;
        s.push_back(cosine(recs[q].vector, recs[j].vector));
        rel.push_back(recs[j].class_id == recs[q].class_id);
      }
      total += ap_oracle(s, rel);
    }
    CHECK(std::abs(retrieval_eval(recs, 3).map - total / 9.0) <= 1e-9);
  }
}

TEST_CASE("retrieval separation and null behaviour") {
  std::vector<EmbeddingRecord> sep;
  for (int i = 0; i < 10; ++i) sep.push_back(rec({i < 5 ? 1.0 : -1.0, 0.01 * i}, i < 5 ? 0 : 1));
  const auto r = retrieval_eval(sep, 3);
  CHECK(r.map == 1.0);
  CHECK(r.knn_accuracy == 1.0);

  Rng rng(3);
  const auto null = retrieval_eval(random_records(400, 16, 4, rng), 5);
  CHECK(std::abs(null.map - 0.25) <= 0.05);

  CHECK_THROWS_AS(retrieval_eval({rec({1, 0}, 0), rec({0, 1}, 1)}, 1), ConfigError);
}

TEST_CASE("cosine of identical vectors is exactly one") {
  const std::vector<double> v = {0.1, 0.7, -0.3};
  CHECK(cosine(v, v) == 1.0);
  CHECK(cosine(v, std::vector<double>{0, 0, 0}) == 0.0);
}

TEST_CASE("aggregation averages members") {
  const std::vector<EmbeddingRecord> same = {rec({1, 2}, 0, 0), rec({1, 2}, 0, 0), rec({1, 2}, 0, 0), rec({1, 2}, 0, 0)};
  CHECK(aggregate(same, Level::FoV).front().vector == std::vector<double>{1, 2});
  const auto zero = aggregate({rec({3, -1}, 0, 7), rec({-3, 1}, 0, 7)}, Level::FoV);
  CHECK(zero.size() == 1);
  CHECK(zero.front().vector == std::vector<double>{0, 0});

  Rng rng(4);
  std::vector<EmbeddingRecord> cells;
  for (int s = 0; s < 3; ++s) {
    auto batch = random_records(24, 5, 1, rng);
    for (auto& r : batch) {
      r.fov_id = s;
      r.class_id = s;
      cells.push_back(r);
    }
  }
  const auto fov = aggregate(cells, Level::FoV);
  REQUIRE(fov.size() == 3);
  for (int s = 0; s < 3; ++s)
    for (int d = 0; d < 5; ++d) {
      double sum = 0;
      for (int i = 0; i < 24; ++i) sum += cells[static_cast<size_t>(s * 24 + i)].vector[static_cast<size_t>(d)];
      CHECK(std::abs(fov[static_cast<size_t>(s)].vector[static_cast<size_t>(d)] - sum / 24) <= 1e-6);
    }
  CHECK(fov[0].level == Level::FoV);
  CHECK_THROWS_AS(aggregate({rec({1}, 0, 1), rec({1}, 1, 1)}, Level::FoV), ConfigError);
  CHECK(aggregate({rec({1}, 0, 1), rec({1}, 1, 1)}, Level::FoV, false).size() == 1);
}

TEST_CASE("post-processing statistics") {
  Rng rng(5);
  auto recs = random_records(200, 4, 2, rng);
  for (auto& r : recs) {
    r.vector[1] = 3 * r.vector[0] + 0.5 * r.vector[1] + 10;
    r.vector[3] *= 7;
  }
  for (auto w : {Whitening::PCA, Whitening::ZCA}) {
    const auto out = FittedPostprocess({Normalization::Standardize, w}, recs).apply(recs);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        double c = 0;
        for (const auto& r : out) c += r.vector[static_cast<size_t>(a)] * r.vector[static_cast<size_t>(b)];
        CHECK(c / 200 == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-4).scale(1));
      }
  }
  const auto robust = FittedPostprocess({Normalization::Robust, Whitening::None}, recs).apply(recs);
  std::vector<double> col;
  for (const auto& r : robust) col.push_back(r.vector[3]);
  CHECK(std::abs(median(col)) <= 1e-9);

  const auto sel = select_postprocess(recs, 5);
  CHECK(sel.all.size() == 9);
  for (const auto& [p, r] : sel.all) CHECK(r.map <= sel.best_result.map);
}

TEST_CASE("linear probe on separable and shuffled labels") {
  Rng rng(6);
  std::normal_distribution<double> g;
  auto make = [&](int n, bool shuffled) {
    std::vector<EmbeddingRecord> out;
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) {
      EmbeddingRecord r;
      r.labels = {static_cast<uint8_t>(coin(rng)), static_cast<uint8_t>(coin(rng))};
      r.vector = {g(rng), g(rng), g(rng)};
      if (!shuffled) {
        r.vector[0] += r.labels[0] ? 4.0 : -4.0;
        r.vector[1] += r.labels[1] ? 4.0 : -4.0;
      }
      out.push_back(r);
    }
    return out;
  };
  ProbeConfig pc;
  pc.hidden_dim = 16;
  pc.lr = 1e-2;
  const auto sep = linear_probe(make(200, false), make(200, false), pc);
  CHECK(sep.macro_map >= 0.99);

  const auto val = make(400, true);
  double prevalence = 0;
  for (const auto& r : val) prevalence += (r.labels[0] + r.labels[1]) / 2.0;
  prevalence /= 400;
  pc.lr = 1e-3;
  pc.max_epochs = 5;
  const auto null = linear_probe(make(400, true), val, pc);
  CHECK(std::abs(null.macro_map - prevalence) <= 0.1);
}

TEST_CASE("probe excludes labels missing from a split") {
  std::vector<EmbeddingRecord> train, val;
  for (int i = 0; i < 20; ++i) {
    EmbeddingRecord r;
    r.vector = {static_cast<double>(i % 2), 1.0};
    r.labels = {static_cast<uint8_t>(i % 2), 0, 1};
    train.push_back(r);
    r.labels = {static_cast<uint8_t>(i % 2), 1, 0};
    val.push_back(r);
  }
  ProbeConfig pc;
  pc.max_epochs = 3;
  const auto res = linear_probe(train, val, pc);
  CHECK(res.excluded_labels == std::vector<int>{1, 2});
  CHECK(std::isnan(res.per_label_ap[1]));
  CHECK(res.macro_map == doctest::Approx(res.per_label_ap[0]));
}

TEST_CASE("embedding options") {
  const auto model = small_model();
  const auto& data = small_data();
  const auto full = embed_dataset(model, data);
  REQUIRE(full.size() == 32);
  CHECK(full.front().vector.size() == 16);
  CHECK(embed_dataset(model, data, {}).front().vector == full.front().vector);

  EmbedOptions drop;
  drop.drop = {"Nucleus"};
  const auto dropped = embed_dataset(model, data, drop);
  CHECK(dropped.front().vector != full.front().vector);

  EmbedOptions flip;
  flip.flip = true;
  CHECK(embed_dataset(model, data, flip).front().vector != full.front().vector);

  EmbedOptions bad;
  bad.drop = {"Protein"};
  CHECK_THROWS_AS(embed_dataset(model, data, bad), ConfigError);
  bad.drop = {"Nucleus", "ER", "Microtubules"};
  CHECK_THROWS_AS(embed_dataset(model, data, bad), ConfigError);
  bad.drop = {"Golgi"};
  CHECK_THROWS_AS(embed_dataset(model, data, bad), ConfigError);

  SynthConfig s;
  s.n_samples = 8;
  s.image_size = 16;
  s.n_context = 2;
  s.n_concept = 3;
  const auto jump = generate(s);
  EmbedOptions ood;
  ood.ood = true;
  const Encoder m2(model.config(), jump.schema, 1);
  CHECK(embed_dataset(m2, jump, ood).front().vector.size() == 3 * 16);

  const Encoder base(baseline_config(model.config(), 1), data.schema, 0);
  CHECK_THROWS_AS(embed_dataset(base, data, drop), ConfigError);
}

TEST_CASE("cosine diagnostic") {
  const auto model = small_model(3);
  const auto d = cosine_diagnostic(model, small_data(), {0, 1, 2});
  for (double v : d[0].intermediate) CHECK(v == 1.0);
  for (double v : d[0].final_cls) CHECK(v == 1.0);
  CHECK(d[1].intermediate.size() == 3 * 32);
  CHECK(d[2].median_intermediate() <= d[1].median_intermediate());
  CHECK(d[2].median_final() <= d[1].median_final());
  CHECK_THROWS_AS(cosine_diagnostic(model, small_data(), {3}), ConfigError);
}

TEST_CASE("embedding CSV round trip") {
  Rng rng(7);
  auto recs = random_records(5, 3, 2, rng);
  recs[2].level = Level::Well;
  recs[2].sample_id = "w2";
  const auto path = (std::filesystem::temp_directory_path() / "c3r_emb_test.csv").string();
  write_embeddings_csv(recs, path);
  const auto back = read_embeddings_csv(path);
  REQUIRE(back.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(back[i].vector == recs[i].vector);
    CHECK(back[i].labels == recs[i].labels);
    CHECK(back[i].level == recs[i].level);
    CHECK(back[i].sample_id == recs[i].sample_id);
  }
  std::filesystem::remove(path);
  CHECK(parse_level("well") == Level::Well);
  CHECK_THROWS_AS(parse_level("plate"), ConfigError);
}
