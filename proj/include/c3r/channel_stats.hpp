#pragma once

// Context/concept separability: every channel is embedded on its own
// (replicated to three channels) by a frozen extractor, all features are
// clustered jointly, and each channel is scored by how concentrated its
// samples are over the clusters.

#include <functional>
#include <string>
#include <vector>

#include "c3r/encoder.hpp"
#include "c3r/synth.hpp"

namespace c3r {

/// Maps a [B, 3, h, w] stack to features [B, F].
using FeatureExtractor = std::function<Tensor(const Tensor&)>;

/// Wraps a 3-channel baseline encoder's cls embedding.
FeatureExtractor make_vit_extractor(Encoder encoder);
/// Seeded random-init 3-channel baseline ViT of the given width.
Encoder default_extractor_encoder(int image_size, int patch_size, int embed_dim, uint64_t seed);

/// Features of `channel` for the selected samples: the single channel is
/// replicated three times and passed through `extractor`.
Tensor extract_channel_features(const Dataset& data, const std::string& channel, const FeatureExtractor& extractor,
                                const std::vector<int>& samples, int batch_size = 64);

struct KMeansResult {
  std::vector<int> labels;
  Tensor centroids;  ///< [K, F]
  std::vector<int> sizes;
  int iterations = 0;
};

/// Lloyd's k-means with seeded k-means++ seeding; ties go to the lowest
/// cluster index. Empty clusters keep their previous centroid.
KMeansResult kmeans(const Tensor& x, int k, uint64_t seed, int max_iter = 100);

struct ChannelDistribution {
  std::string channel;
  std::vector<double> p;  ///< fraction of the channel's samples in each cluster
  int n_samples = 0;
};

struct ChannelFeatures {
  std::string channel;
  Tensor features;  ///< [n, F]
};

struct ClusterAssignment {
  KMeansResult clusters;
  std::vector<ChannelDistribution> distributions;
  std::vector<int> assigned_cluster;  ///< argmax_k p, lowest index on ties
};

ClusterAssignment cluster_and_assign(const std::vector<ChannelFeatures>& channels, int k, uint64_t seed,
                                     int max_iter = 100);

struct ParityEntropy {
  double parity = 0;   ///< max_k p_k
  double entropy = 0;  ///< -sum p log2 p, 0 log 0 := 0
};

ParityEntropy parity_entropy(const ChannelDistribution& dist);

struct ChannelReport {
  std::string channel;
  double parity = 0;
  double entropy = 0;
  int assigned_cluster = 0;
  ChannelRole suggested = ChannelRole::Concept;
};

struct ParityEntropyReport {
  std::vector<ChannelReport> channels;
  double threshold = 0.8;

  std::string table() const;
  nlohmann::json to_json() const;
  /// Manifest with suggested roles; indices follow `schema`. Throws if the
  /// suggestion leaves a group empty.
  GroupSchema suggested_schema(const GroupSchema& schema) const;
};

/// Rows sorted by descending parity; channels above `threshold` are
/// suggested as context. Suggestions are advisory only.
ParityEntropyReport emit_report(const std::vector<ChannelDistribution>& dists, const std::vector<int>& assigned,
                                double threshold = 0.8);

}  // namespace c3r
