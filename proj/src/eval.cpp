#include "c3r/eval.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "c3r/mcd.hpp"
#include "c3r/optim.hpp"

namespace c3r {
namespace {

using Mat = Eigen::MatrixXd;

std::vector<int> dropped_positions(const GroupSchema& schema, const std::vector<std::string>& drop) {
  std::vector<int> pos;
  const auto ctx = schema.context_names();
  for (const auto& name : drop) {
    const auto spec = schema.find(name);
    if (!spec) throw ConfigError("drop: unknown channel '" + name + "'");
    if (spec->role != ChannelRole::Context) throw ConfigError("drop: '" + name + "' is a concept channel; only context channels can be dropped");
    pos.push_back(static_cast<int>(std::find(ctx.begin(), ctx.end(), name) - ctx.begin()));
  }
  std::sort(pos.begin(), pos.end());
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
  if (static_cast<int>(pos.size()) >= schema.num_context()) throw ConfigError("drop: cannot remove every context channel");
  return pos;
}

std::vector<int> iota_range(int64_t begin, int64_t end) {
  std::vector<int> v(static_cast<size_t>(end - begin));
  std::iota(v.begin(), v.end(), static_cast<int>(begin));
  return v;
}

void append_rows(std::vector<EmbeddingRecord>& out, const Dataset& data, int64_t begin, const Tensor& emb) {
  const int64_t B = emb.dim(0), D = emb.dim(1);
  for (int64_t b = 0; b < B; ++b) {
    const auto& s = data.samples[static_cast<size_t>(begin + b)];
    EmbeddingRecord r;
    r.sample_id = s.id;
    r.vector.assign(emb.data() + b * D, emb.data() + (b + 1) * D);
    r.labels = s.multilabels;
    r.class_id = s.class_id;
    r.group_id = s.group_id;
    r.fov_id = s.fov_id;
    r.well_id = s.well_id;
    out.push_back(std::move(r));
  }
}

std::vector<std::vector<int>> subsets_of_size(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<bool> pick(static_cast<size_t>(n), false);
  std::fill(pick.begin(), pick.begin() + k, true);
  do {
    std::vector<int> s;
    for (int i = 0; i < n; ++i)
      if (pick[static_cast<size_t>(i)]) s.push_back(i);
    out.push_back(std::move(s));
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return out;
}

Mat to_matrix(const std::vector<EmbeddingRecord>& records) {
  const auto D = static_cast<Eigen::Index>(records.front().vector.size());
  Mat X(static_cast<Eigen::Index>(records.size()), D);
  for (size_t i = 0; i < records.size(); ++i)
    for (Eigen::Index d = 0; d < D; ++d) X(static_cast<Eigen::Index>(i), d) = records[i].vector[static_cast<size_t>(d)];
  return X;
}

}  // namespace

std::string_view to_string(Level level) {
  switch (level) {
    case Level::Cell: return "cell";
    case Level::FoV: return "fov";
    default: return "well";
  }
}

Level parse_level(std::string_view s) {
  if (s == "cell") return Level::Cell;
  if (s == "fov") return Level::FoV;
  if (s == "well") return Level::Well;
  throw ConfigError("unknown level '" + std::string(s) + "' (expected cell, fov or well)");
}

std::vector<EmbeddingRecord> embed_dataset(const Encoder& model, const Dataset& data, const EmbedOptions& opts) {
  if (data.samples.empty()) throw ConfigError("embed_dataset: empty dataset");
  if (opts.batch_size < 1) throw ConfigError("embed_dataset: batch_size must be >= 1");
  const bool cce = model.config().arch == Architecture::CCE;
  if (!cce && (!opts.drop.empty() || opts.flip || opts.ood))
    throw ConfigError("drop, flip and OOD sharing require the grouped (cce) architecture");
  if (!cce && !(data.schema == model.schema())) throw ConfigError("baseline model requires the dataset's exact channel schema");
  const auto dropped = dropped_positions(data.schema, opts.drop);
  std::optional<OODSharingPlan> plan;
  if (opts.ood) plan = build_ood_plan(data.schema);

  ag::NoGradGuard guard;
  ForwardOptions fo;
  fo.flip_groups = opts.flip;
  std::vector<EmbeddingRecord> out;
  for (int64_t begin = 0; begin < data.size(); begin += opts.batch_size) {
    const int64_t end = std::min<int64_t>(data.size(), begin + opts.batch_size);
    const Tensor x = data.stack(iota_range(begin, end));
    Tensor emb;
    if (!cce) {
      emb = model.forward(x).cls->value;
    } else if (plan) {
      std::vector<Tensor> parts;
      for (const auto& pass : plan->passes) {
        auto g = select_pass(x, data.schema, pass);
        if (!dropped.empty()) g.context = remove_channels(g.context, dropped);
        parts.push_back(model.forward(g, fo).cls->value.reshaped({end - begin, 1, model.config().embed_dim}));
      }
      emb = concat_axis1(parts);
      emb.reshape_inplace({end - begin, emb.numel() / (end - begin)});
    } else {
      auto g = split_groups(x, data.schema);
      if (!dropped.empty()) g.context = remove_channels(g.context, dropped);
      emb = model.forward(g, fo).cls->value;
    }
    if (!emb.all_finite()) throw NumericError("embed_dataset: non-finite embedding");
    append_rows(out, data, begin, emb);
  }
  return out;
}

std::vector<EmbeddingRecord> aggregate(const std::vector<EmbeddingRecord>& records, Level to, bool require_same_class) {
  if (to == Level::Cell) throw ConfigError("aggregate: target level must be fov or well");
  std::vector<int> order;
  std::map<int, std::vector<size_t>> groups;
  for (size_t i = 0; i < records.size(); ++i) {
    const int key = to == Level::FoV ? records[i].fov_id : records[i].well_id;
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(i);
  }
  std::vector<EmbeddingRecord> out;
  for (int key : order) {
    const auto& members = groups[key];
    EmbeddingRecord r = records[members.front()];
    r.sample_id = std::string(to == Level::FoV ? "fov" : "well") + std::to_string(key);
    r.level = to;
    std::fill(r.vector.begin(), r.vector.end(), 0.0);
    for (size_t m : members) {
      const auto& src = records[m];
      if (src.vector.size() != r.vector.size()) throw ShapeError("aggregate: ragged embeddings");
      if (require_same_class && src.class_id != r.class_id)
        throw ConfigError("aggregate: group " + std::to_string(key) + " mixes classes " + std::to_string(r.class_id) +
                          " and " + std::to_string(src.class_id));
      for (size_t d = 0; d < r.vector.size(); ++d) r.vector[d] += src.vector[d];
      for (size_t l = 0; l < r.labels.size() && l < src.labels.size(); ++l) r.labels[l] |= src.labels[l];
    }
    for (double& v : r.vector) v /= static_cast<double>(members.size());
    out.push_back(std::move(r));
  }
  return out;
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& relevant) {
  if (scores.size() != relevant.size()) throw ShapeError("average_precision: size mismatch");
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double hits = 0, sum = 0;
  for (size_t r = 0; r < idx.size(); ++r)
    if (relevant[idx[r]]) {
      hits += 1;
      sum += hits / static_cast<double>(r + 1);
    }
  return hits > 0 ? sum / hits : 0.0;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: size mismatch");
  if (std::equal(a.begin(), a.end(), b.begin())) return 1.0;
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double den = std::sqrt(aa) * std::sqrt(bb);
  return den > 0 ? ab / den : 0.0;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

RetrievalResult retrieval_eval(const std::vector<EmbeddingRecord>& records, int k) {
  if (k < 1) throw ConfigError("retrieval: k must be >= 1");
  const size_t M = records.size();
  std::map<int, int> count;
  for (const auto& r : records) ++count[r.class_id];
  // Unit vectors make every similarity a dot product.
  std::vector<std::vector<double>> unit(M);
  for (size_t i = 0; i < M; ++i) {
    double n = 0;
    for (double v : records[i].vector) n += v * v;
    n = std::sqrt(n);
    unit[i] = records[i].vector;
    if (n > 0)
      for (double& v : unit[i]) v /= n;
  }
  RetrievalResult res;
  res.k = k;
  double ap_sum = 0, knn_hits = 0;
  std::vector<double> scores;
  std::vector<bool> rel;
  std::vector<int> cls;
  for (size_t q = 0; q < M; ++q) {
    if (count[records[q].class_id] < 2) continue;
    scores.clear();
    rel.clear();
    cls.clear();
    for (size_t j = 0; j < M; ++j) {
      if (j == q) continue;
      double s = 0;
      for (size_t d = 0; d < unit[q].size(); ++d) s += unit[q][d] * unit[j][d];
      scores.push_back(s);
      rel.push_back(records[j].class_id == records[q].class_id);
      cls.push_back(records[j].class_id);
    }
    ap_sum += average_precision(scores, rel);
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::map<int, std::pair<int, double>> votes;
    for (size_t r = 0; r < std::min<size_t>(static_cast<size_t>(k), idx.size()); ++r) {
      auto& v = votes[cls[idx[r]]];
      ++v.first;
      v.second += scores[idx[r]];
    }
    int best = -1;
    std::pair<int, double> best_vote{-1, 0};
    for (const auto& [c, v] : votes)
      if (v.first > best_vote.first || (v.first == best_vote.first && v.second > best_vote.second)) {
        best = c;
        best_vote = v;
      }
    knn_hits += best == records[q].class_id;
    ++res.queries;
  }
  if (res.queries == 0) throw ConfigError("retrieval: every class is a singleton; mAP is undefined");
  res.map = ap_sum / res.queries;
  res.knn_accuracy = knn_hits / res.queries;
  return res;
}

std::string Postprocess::name() const {
  static const char* n[] = {"none", "standardize", "robust"};
  static const char* w[] = {"none", "pca", "zca"};
  return std::string(n[static_cast<int>(norm)]) + "+" + w[static_cast<int>(whiten)];
}

FittedPostprocess::FittedPostprocess(const Postprocess& p, const std::vector<EmbeddingRecord>& ref, double eps) : spec_(p) {
  if (ref.empty()) throw ConfigError("postprocess: empty reference set");
  const Mat X = to_matrix(ref);
  dim_ = X.cols();
  center_.assign(static_cast<size_t>(dim_), 0.0);
  scale_.assign(static_cast<size_t>(dim_), 1.0);
  for (Eigen::Index d = 0; d < X.cols(); ++d) {
    std::vector<double> col(X.col(d).data(), X.col(d).data() + X.rows());
    if (p.norm == Normalization::Standardize) {
      const double mu = X.col(d).mean();
      const double var = (X.col(d).array() - mu).square().mean();
      center_[static_cast<size_t>(d)] = mu;
      scale_[static_cast<size_t>(d)] = std::sqrt(var) + eps;
    } else if (p.norm == Normalization::Robust) {
      const double med = median(col);
      for (double& v : col) v = std::abs(v - med);
      center_[static_cast<size_t>(d)] = med;
      scale_[static_cast<size_t>(d)] = 1.4826 * median(col) + eps;
    }
  }
  if (p.whiten == Whitening::None) return;
  Mat Z = X;
  for (Eigen::Index d = 0; d < Z.cols(); ++d)
    Z.col(d) = (Z.col(d).array() - center_[static_cast<size_t>(d)]) / scale_[static_cast<size_t>(d)];
  const Eigen::VectorXd mu = Z.colwise().mean();
  mean_.assign(mu.data(), mu.data() + mu.size());
  Z.rowwise() -= mu.transpose();
  const Mat cov = (Z.transpose() * Z) / static_cast<double>(std::max<Eigen::Index>(1, Z.rows()));
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const double floor = eps * std::max(lam.maxCoeff(), 1e-12);
  const Eigen::VectorXd inv = (lam.array() + floor).rsqrt().matrix();
  Mat W = inv.asDiagonal() * es.eigenvectors().transpose();
  if (p.whiten == Whitening::ZCA) W = es.eigenvectors() * W;
  transform_.resize(static_cast<size_t>(W.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(transform_.data(), W.rows(), W.cols()) = W;
}

std::vector<EmbeddingRecord> FittedPostprocess::apply(const std::vector<EmbeddingRecord>& records) const {
  std::vector<EmbeddingRecord> out = records;
  for (auto& r : out) {
    if (static_cast<int64_t>(r.vector.size()) != dim_) throw ShapeError("postprocess: dimension mismatch");
    for (size_t d = 0; d < r.vector.size(); ++d) r.vector[d] = (r.vector[d] - center_[d]) / scale_[d];
    if (transform_.empty()) continue;
    std::vector<double> z(r.vector.size());
    for (size_t d = 0; d < z.size(); ++d) z[d] = r.vector[d] - mean_[d];
    for (size_t i = 0; i < z.size(); ++i) {
      double s = 0;
      for (size_t d = 0; d < z.size(); ++d) s += transform_[i * z.size() + d] * z[d];
      r.vector[i] = s;
    }
  }
  return out;
}

PostprocessSelection select_postprocess(const std::vector<EmbeddingRecord>& validation, int k) {
  PostprocessSelection sel;
  bool first = true;
  for (auto n : {Normalization::None, Normalization::Standardize, Normalization::Robust})
    for (auto w : {Whitening::None, Whitening::PCA, Whitening::ZCA}) {
      const Postprocess p{n, w};
      const auto res = retrieval_eval(FittedPostprocess(p, validation).apply(validation), k);
      sel.all.emplace_back(p, res);
      if (first || res.map > sel.best_result.map) {
        sel.best = p;
        sel.best_result = res;
        first = false;
      }
    }
  return sel;
}

ProbeResult linear_probe(const std::vector<EmbeddingRecord>& train, const std::vector<EmbeddingRecord>& val,
                         const ProbeConfig& cfg, const std::vector<std::vector<EmbeddingRecord>>& transfer) {
  if (train.empty() || val.empty()) throw ConfigError("linear_probe: empty train or validation set");
  const int64_t D = static_cast<int64_t>(train.front().vector.size());
  const int64_t L = static_cast<int64_t>(train.front().labels.size());
  if (L == 0) throw ConfigError("linear_probe: records carry no labels");

  std::vector<bool> active(static_cast<size_t>(L), false), in_val(static_cast<size_t>(L), false);
  for (const auto& r : train)
    for (int64_t l = 0; l < L; ++l) active[static_cast<size_t>(l)] = active[static_cast<size_t>(l)] || r.labels[static_cast<size_t>(l)];
  for (const auto& r : val)
    for (int64_t l = 0; l < L; ++l) in_val[static_cast<size_t>(l)] = in_val[static_cast<size_t>(l)] || r.labels[static_cast<size_t>(l)];
  ProbeResult res;
  for (int64_t l = 0; l < L; ++l) {
    if (!active[static_cast<size_t>(l)]) spdlog::warn("linear probe: label {} absent from the training set; excluded", l);
    else if (!in_val[static_cast<size_t>(l)]) spdlog::warn("linear probe: label {} absent from the validation set; excluded", l);
    if (!active[static_cast<size_t>(l)] || !in_val[static_cast<size_t>(l)]) res.excluded_labels.push_back(static_cast<int>(l));
  }
  if (static_cast<int64_t>(res.excluded_labels.size()) == L) throw ConfigError("linear_probe: no label can be scored");

  // Standardisation statistics come from the training set only.
  std::vector<double> mu(static_cast<size_t>(D), 0.0), sd(static_cast<size_t>(D), 0.0);
  for (const auto& r : train)
    for (int64_t d = 0; d < D; ++d) mu[static_cast<size_t>(d)] += r.vector[static_cast<size_t>(d)] / static_cast<double>(train.size());
  for (const auto& r : train)
    for (int64_t d = 0; d < D; ++d) {
      const double z = r.vector[static_cast<size_t>(d)] - mu[static_cast<size_t>(d)];
      sd[static_cast<size_t>(d)] += z * z / static_cast<double>(train.size());
    }
  for (double& s : sd) s = std::sqrt(s) + 1e-8;
  auto features = [&](const std::vector<EmbeddingRecord>& rs, const std::vector<int>& idx) {
    Tensor x({static_cast<int64_t>(idx.size()), D});
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t d = 0; d < D; ++d)
        x[static_cast<int64_t>(i) * D + d] = (rs[static_cast<size_t>(idx[i])].vector[static_cast<size_t>(d)] - mu[static_cast<size_t>(d)]) / sd[static_cast<size_t>(d)];
    return x;
  };
  auto targets = [&](const std::vector<EmbeddingRecord>& rs, const std::vector<int>& idx) {
    Tensor y({static_cast<int64_t>(idx.size()), L});
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t l = 0; l < L; ++l) y[static_cast<int64_t>(i) * L + l] = rs[static_cast<size_t>(idx[i])].labels[static_cast<size_t>(l)];
    return y;
  };

  Rng rng(cfg.seed);
  ParamStore ps;
  nn::init_linear(ps, "fc1", D, cfg.hidden_dim, rng);
  nn::init_linear(ps, "fc2", cfg.hidden_dim, cfg.hidden_dim, rng);
  nn::init_linear(ps, "fc3", cfg.hidden_dim, L, rng);
  auto mlp = [&ps](const ag::Var& x) {
    auto h = ag::gelu(nn::apply_linear(ps, "fc1", x));
    h = ag::gelu(nn::apply_linear(ps, "fc2", h));
    return nn::apply_linear(ps, "fc3", h);
  };
  AdamW opt(ps, {cfg.lr, 0.9, 0.999, 1e-8, 0.0});

  struct Scored {
    Tensor x, y;
    size_t n;
  };
  auto scored = [&](const std::vector<EmbeddingRecord>& rs) {
    if (!rs.empty() && static_cast<int64_t>(rs.front().vector.size()) != D) throw ShapeError("linear_probe: dimension mismatch");
    std::vector<int> idx(rs.size());
    std::iota(idx.begin(), idx.end(), 0);
    return Scored{features(rs, idx), targets(rs, idx), rs.size()};
  };
  const Scored sv = scored(val);
  std::vector<Scored> st;
  for (const auto& t : transfer) st.push_back(scored(t));
  // Labels are scored only where they are present in the set.
  auto score = [&](const Scored& set, std::vector<double>& per_label) {
    ag::NoGradGuard guard;
    const Tensor s = mlp(ag::constant(set.x))->value;
    per_label.assign(static_cast<size_t>(L), std::numeric_limits<double>::quiet_NaN());
    double sum = 0;
    int n = 0;
    for (int64_t l = 0; l < L; ++l) {
      if (!active[static_cast<size_t>(l)] || !in_val[static_cast<size_t>(l)]) continue;
      std::vector<double> sc(set.n);
      std::vector<bool> rel(set.n);
      for (size_t i = 0; i < set.n; ++i) {
        sc[i] = s[static_cast<int64_t>(i) * L + l];
        rel[i] = set.y[static_cast<int64_t>(i) * L + l] > 0.5;
      }
      if (std::none_of(rel.begin(), rel.end(), [](bool r) { return r; })) continue;
      per_label[static_cast<size_t>(l)] = average_precision(sc, rel);
      sum += per_label[static_cast<size_t>(l)];
      ++n;
    }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
  };
  auto score_val = [&](std::vector<double>& per_label) { return score(sv, per_label); };
  auto score_transfer = [&] {
    res.transfer_map.clear();
    std::vector<double> unused;
    for (const auto& t : st) res.transfer_map.push_back(score(t, unused));
  };

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  res.macro_map = score_val(res.per_label_ap);
  score_transfer();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs && since_best < cfg.patience; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
      const std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + static_cast<size_t>(cfg.batch_size))));
      auto loss = ag::sigmoid_focal(mlp(ag::constant(features(train, idx))), targets(train, idx), cfg.focal_alpha,
                                    cfg.focal_gamma, active);
      ps.zero_grad();
      ag::backward(loss);
      opt.step(ps, cfg.lr);
    }
    std::vector<double> per_label;
    const double m = score_val(per_label);
    if (m > res.macro_map) {
      res.macro_map = m;
      res.per_label_ap = per_label;
      res.best_epoch = epoch;
      score_transfer();
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  return res;
}

double CosineDiagnostic::median_intermediate() const { return median(intermediate); }
double CosineDiagnostic::median_final() const { return median(final_cls); }

std::vector<CosineDiagnostic> cosine_diagnostic(const Encoder& model, const Dataset& data,
                                                const std::vector<int>& drop_counts, int batch_size) {
  if (model.config().arch != Architecture::CCE) throw ConfigError("cosine diagnostic requires the cce architecture");
  const int C1 = data.schema.num_context();
  std::vector<CosineDiagnostic> out;
  for (int c : drop_counts) {
    if (c < 0 || c >= C1)
      throw ConfigError("cosine diagnostic: drop count " + std::to_string(c) + " must be below C1=" + std::to_string(C1));
    out.push_back({c, {}, {}});
  }
  ag::NoGradGuard guard;
  for (int64_t begin = 0; begin < data.size(); begin += batch_size) {
    const int64_t end = std::min<int64_t>(data.size(), begin + batch_size);
    const auto g = split_groups(data.stack(iota_range(begin, end)), data.schema);
    const auto full = model.forward(g);
    const int64_t B = end - begin;
    const int64_t Fi = full.context_branch->value.numel() / B, Fc = full.cls->value.numel() / B;
    for (auto& diag : out) {
      for (const auto& subset : subsets_of_size(C1, diag.drop_count)) {
        const auto sparse = diag.drop_count == 0 ? full : model.forward(GroupedBatch{remove_channels(g.context, subset), g.content});
        for (int64_t b = 0; b < B; ++b) {
          diag.intermediate.push_back(cosine({full.context_branch->value.data() + b * Fi, static_cast<size_t>(Fi)},
                                             {sparse.context_branch->value.data() + b * Fi, static_cast<size_t>(Fi)}));
          diag.final_cls.push_back(cosine({full.cls->value.data() + b * Fc, static_cast<size_t>(Fc)},
                                          {sparse.cls->value.data() + b * Fc, static_cast<size_t>(Fc)}));
        }
      }
    }
  }
  return out;
}

void write_embeddings_csv(const std::vector<EmbeddingRecord>& records, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  const size_t D = records.empty() ? 0 : records.front().vector.size();
  f << "sample_id,level,class_id,group_id,fov_id,well_id,labels";
  for (size_t d = 0; d < D; ++d) f << ",e" << d;
  f << '\n';
  f.precision(17);
  for (const auto& r : records) {
    std::string lab;
    for (auto v : r.labels) lab.push_back(v ? '1' : '0');
    f << r.sample_id << ',' << to_string(r.level) << ',' << r.class_id << ',' << r.group_id << ',' << r.fov_id << ','
      << r.well_id << ',' << lab;
    for (double v : r.vector) f << ',' << v;
    f << '\n';
  }
}

std::vector<EmbeddingRecord> read_embeddings_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open embeddings " + path);
  std::string line;
  std::getline(f, line);
  std::vector<EmbeddingRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() < 7) throw ConfigError("embeddings: malformed row in " + path);
    EmbeddingRecord r;
    r.sample_id = cells[0];
    r.level = parse_level(cells[1]);
    r.class_id = std::stoi(cells[2]);
    r.group_id = std::stoi(cells[3]);
    r.fov_id = std::stoi(cells[4]);
    r.well_id = std::stoi(cells[5]);
    for (char c : cells[6]) r.labels.push_back(c == '1');
    for (size_t i = 7; i < cells.size(); ++i) r.vector.push_back(std::stod(cells[i]));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace c3r
