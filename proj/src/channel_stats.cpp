#include "c3r/channel_stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace c3r {
namespace {

double sq_dist(const double* a, const double* b, int64_t F) {
  double s = 0;
  for (int64_t f = 0; f < F; ++f) s += (a[f] - b[f]) * (a[f] - b[f]);
  return s;
}

}  // namespace

FeatureExtractor make_vit_extractor(Encoder encoder) {
  if (encoder.config().arch != Architecture::Baseline || encoder.config().in_channels != 3)
    throw ConfigError("feature extractor must be a 3-channel baseline encoder");
  return [enc = std::move(encoder)](const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("extractor expects [B, 3, h, w], got " + shape_str(x.shape()));
    if (x.dim(2) != enc.config().image_size || x.dim(3) != enc.config().image_size)
      throw ShapeError("extractor expects " + std::to_string(enc.config().image_size) + "px inputs, got " +
                       shape_str(x.shape()));
    ag::NoGradGuard guard;
    return enc.forward(x).cls->value;
  };
}

Encoder default_extractor_encoder(int image_size, int patch_size, int embed_dim, uint64_t seed) {
  EncoderConfig cfg;
  cfg.arch = Architecture::Baseline;
  cfg.embed_dim = embed_dim;
  cfg.heads = 4;
  cfg.branch_depth = 0;
  cfg.shared_depth = 2;
  cfg.patch_size = patch_size;
  cfg.image_size = image_size;
  cfg.in_channels = 3;
  // Raw intensities keep absolute brightness information in the features.
  cfg.instance_norm = false;
  GroupSchema rgb({{"r", ChannelRole::Context, 0}, {"g", ChannelRole::Context, 1}, {"b", ChannelRole::Concept, 2}});
  return Encoder(cfg, rgb, seed);
}

Tensor extract_channel_features(const Dataset& data, const std::string& channel, const FeatureExtractor& extractor,
                                const std::vector<int>& samples, int batch_size) {
  if (samples.empty()) throw ConfigError("extract_channel_features: no samples for channel '" + channel + "'");
  const int src = data.schema.channel(channel).source_index;
  Tensor out;
  int64_t row = 0;
  for (size_t begin = 0; begin < samples.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(samples.size(), begin + static_cast<size_t>(batch_size));
    const std::vector<int> idx(samples.begin() + static_cast<std::ptrdiff_t>(begin), samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor x = data.stack(idx);
    const int sel[] = {src, src, src};
    const Tensor f = extractor(gather_axis1(x, sel));
    if (out.empty()) out = Tensor({static_cast<int64_t>(samples.size()), f.dim(1)});
    std::copy(f.data(), f.data() + f.numel(), out.data() + row * f.dim(1));
    row += f.dim(0);
  }
  return out;
}

KMeansResult kmeans(const Tensor& x, int k, uint64_t seed, int max_iter) {
  if (x.rank() != 2) throw ShapeError("kmeans: expected [M, F]");
  const int64_t M = x.dim(0), F = x.dim(1);
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (M < k) throw ConfigError("kmeans: need at least k samples");
  Rng rng(seed);
  KMeansResult r;
  r.centroids = Tensor({k, F});
  // k-means++ seeding.
  std::vector<double> d2(static_cast<size_t>(M), std::numeric_limits<double>::infinity());
  int64_t first = std::uniform_int_distribution<int64_t>(0, M - 1)(rng);
  std::copy(x.data() + first * F, x.data() + (first + 1) * F, r.centroids.data());
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (int64_t i = 0; i < M; ++i) {
      d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], sq_dist(x.data() + i * F, r.centroids.data() + (c - 1) * F, F));
      total += d2[static_cast<size_t>(i)];
    }
    int64_t pick = 0;
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < M - 1; ++pick) {
        u -= d2[static_cast<size_t>(pick)];
        if (u < 0) break;
      }
    }
    std::copy(x.data() + pick * F, x.data() + (pick + 1) * F, r.centroids.data() + c * F);
  }

  r.labels.assign(static_cast<size_t>(M), -1);
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    bool changed = false;
    for (int64_t i = 0; i < M; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(x.data() + i * F, r.centroids.data() + c * F, F);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (r.labels[static_cast<size_t>(i)] != best) {
        r.labels[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Tensor sums({k, F});
    std::vector<int> n(static_cast<size_t>(k), 0);
    for (int64_t i = 0; i < M; ++i) {
      const int c = r.labels[static_cast<size_t>(i)];
      ++n[static_cast<size_t>(c)];
      for (int64_t f = 0; f < F; ++f) sums[c * F + f] += x[i * F + f];
    }
    for (int c = 0; c < k; ++c)
      if (n[static_cast<size_t>(c)] > 0)
        for (int64_t f = 0; f < F; ++f) r.centroids[c * F + f] = sums[c * F + f] / n[static_cast<size_t>(c)];
  }
  r.sizes.assign(static_cast<size_t>(k), 0);
  for (int l : r.labels) ++r.sizes[static_cast<size_t>(l)];
  return r;
}

ClusterAssignment cluster_and_assign(const std::vector<ChannelFeatures>& channels, int k, uint64_t seed, int max_iter) {
  if (k < 2) throw ConfigError("cluster_and_assign: K must be >= 2");
  int64_t total = 0, F = -1;
  for (const auto& c : channels) {
    if (c.features.rank() != 2 || c.features.dim(0) == 0)
      throw ConfigError("cluster_and_assign: channel '" + c.channel + "' has no samples");
    if (F >= 0 && c.features.dim(1) != F) throw ShapeError("cluster_and_assign: feature widths differ");
    F = c.features.dim(1);
    total += c.features.dim(0);
  }
  if (total < k) throw ConfigError("cluster_and_assign: fewer samples than clusters");
  Tensor all({total, F});
  int64_t off = 0;
  for (const auto& c : channels) {
    std::copy(c.features.data(), c.features.data() + c.features.numel(), all.data() + off);
    off += c.features.numel();
  }
  ClusterAssignment out;
  out.clusters = kmeans(all, k, seed, max_iter);
  int64_t row = 0;
  for (const auto& c : channels) {
    ChannelDistribution d{c.channel, std::vector<double>(static_cast<size_t>(k), 0.0), static_cast<int>(c.features.dim(0))};
    for (int64_t i = 0; i < c.features.dim(0); ++i) d.p[static_cast<size_t>(out.clusters.labels[static_cast<size_t>(row++)])] += 1.0;
    for (double& v : d.p) v /= d.n_samples;
    out.assigned_cluster.push_back(static_cast<int>(std::max_element(d.p.begin(), d.p.end()) - d.p.begin()));
    out.distributions.push_back(std::move(d));
  }
  return out;
}

ParityEntropy parity_entropy(const ChannelDistribution& dist) {
  ParityEntropy r;
  for (double p : dist.p) {
    r.parity = std::max(r.parity, p);
    if (p > 0) r.entropy -= p * std::log2(p);
  }
  // A point mass has exactly zero entropy.
  if (r.parity == 1.0) r.entropy = 0.0;
  return r;
}

ParityEntropyReport emit_report(const std::vector<ChannelDistribution>& dists, const std::vector<int>& assigned,
                                double threshold) {
  if (dists.size() < 2) throw ConfigError("emit_report: need at least two channels");
  ParityEntropyReport rep;
  rep.threshold = threshold;
  for (size_t i = 0; i < dists.size(); ++i) {
    const auto pe = parity_entropy(dists[i]);
    const int cluster = i < assigned.size()
                            ? assigned[i]
                            : static_cast<int>(std::max_element(dists[i].p.begin(), dists[i].p.end()) - dists[i].p.begin());
    rep.channels.push_back({dists[i].channel, pe.parity, pe.entropy, cluster,
                            pe.parity > threshold ? ChannelRole::Context : ChannelRole::Concept});
  }
  std::stable_sort(rep.channels.begin(), rep.channels.end(),
                   [](const ChannelReport& a, const ChannelReport& b) { return a.parity > b.parity; });
  return rep;
}

std::string ParityEntropyReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "channel" << std::right << std::setw(10) << "parity" << std::setw(10) << "entropy"
     << std::setw(9) << "cluster" << "  suggested\n";
  os << std::fixed << std::setprecision(3);
  for (const auto& c : channels)
    os << std::left << std::setw(16) << c.channel << std::right << std::setw(10) << c.parity << std::setw(10) << c.entropy
       << std::setw(9) << c.assigned_cluster << "  " << to_string(c.suggested) << '\n';
  os << "(advisory: parity > " << threshold << " suggests context)\n";
  return os.str();
}

nlohmann::json ParityEntropyReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : channels)
    rows.push_back({{"channel", c.channel},
                    {"parity", c.parity},
                    {"entropy", c.entropy},
                    {"assigned_cluster", c.assigned_cluster},
                    {"suggested_role", std::string(to_string(c.suggested))}});
  return {{"threshold", threshold}, {"channels", rows}};
}

GroupSchema ParityEntropyReport::suggested_schema(const GroupSchema& schema) const {
  std::vector<ChannelSpec> specs = schema.channels();
  for (auto& s : specs) {
    const auto it = std::find_if(channels.begin(), channels.end(), [&](const ChannelReport& c) { return c.channel == s.name; });
    if (it == channels.end()) throw ConfigError("suggested manifest: channel '" + s.name + "' missing from report");
    s.role = it->suggested;
  }
  return GroupSchema(std::move(specs));
}

}  // namespace c3r
