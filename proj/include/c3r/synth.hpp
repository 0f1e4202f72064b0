#pragma once

// Synthetic microscopy-like data with known ground truth. Context channels
// render a per-sample cell geometry (nucleus ellipse, ER ring, filaments,
// membrane) whose jitter scales with 1 - context_coherence. Concept
// channels carry class-dependent spot patterns, each spot anchored to a
// compartment of the context geometry with probability
// concept_context_coupling and placed uniformly otherwise.

#include <cstdint>
#include <string>
#include <vector>

#include "c3r/channel_schema.hpp"
#include "json.hpp"

namespace c3r {

struct SynthConfig {
  int n_samples = 256;
  int image_size = 32;
  int n_context = 3;
  int n_concept = 1;
  int n_classes = 4;
  double context_coherence = 0.9;
  double concept_context_coupling = 0.8;
  double noise_level = 0.03;
  uint64_t seed = 0;
  /// Consecutive samples sharing a group (antibody analog) and label set.
  int samples_per_group = 8;
  int cells_per_fov = 4;
  int fovs_per_well = 2;
  /// Probability that a group carries a second label.
  double multilabel_prob = 0.25;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct SynthSample {
  std::string id;
  Tensor image;  ///< [C, h, w] in [0, 1], channel order = schema source index
  std::vector<uint8_t> multilabels;
  int class_id = 0;
  int group_id = 0;
  int fov_id = 0;
  int well_id = 0;
};

struct Dataset {
  GroupSchema schema;
  int num_labels = 0;
  std::vector<SynthSample> samples;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  int64_t image_size() const { return samples.empty() ? 0 : samples.front().image.dim(1); }
  /// [B, C, h, w] stack of the selected samples.
  Tensor stack(const std::vector<int>& indices) const;
  Dataset subset(const std::vector<int>& indices) const;
};

/// Default channel names: context {Nucleus, ER, Microtubules, Actin, ...},
/// concept {Protein} or {RNA, AGP, Mito, ...}.
GroupSchema synth_schema(int n_context, int n_concept);

Dataset generate(const SynthConfig& cfg);

/// Layout: root/manifest, root/labels, root/images/<sample>/<channel>.png.
void write_dataset(const Dataset& data, const std::string& root);
Dataset load_dataset(const std::string& root);

/// Deterministic split keeping whole groups together; `fraction` of the
/// groups go to the first part.
std::pair<Dataset, Dataset> split_by_group(const Dataset& data, double fraction, uint64_t seed);

}  // namespace c3r
