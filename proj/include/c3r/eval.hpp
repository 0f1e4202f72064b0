#pragma once

// Downstream evaluation: embedding extraction (with channel drop, group flip
// and OOD concept sharing), hierarchical aggregation, multi-label probing,
// leave-one-out retrieval and the full-vs-sparse cosine diagnostic.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c3r/encoder.hpp"
#include "c3r/synth.hpp"

namespace c3r {

enum class Level { Cell, FoV, Well };
std::string_view to_string(Level level);
Level parse_level(std::string_view s);

struct EmbeddingRecord {
  std::string sample_id;
  std::vector<double> vector;
  std::vector<uint8_t> labels;
  int class_id = 0;
  int group_id = 0;
  int fov_id = 0;
  int well_id = 0;
  Level level = Level::Cell;
};

struct EmbedOptions {
  std::vector<std::string> drop;  ///< context channel names removed at inference
  bool flip = false;
  bool ood = false;  ///< one pass per concept channel, outputs concatenated
  int batch_size = 64;
};

/// Deterministic cls embeddings of every sample.
std::vector<EmbeddingRecord> embed_dataset(const Encoder& model, const Dataset& data, const EmbedOptions& opts = {});

/// Unweighted mean per fov_id (to FoV) or well_id (to Well). Retrieval-style
/// aggregation (`require_same_class`) rejects groups with mixed classes;
/// multi-labels are united.
std::vector<EmbeddingRecord> aggregate(const std::vector<EmbeddingRecord>& records, Level to,
                                       bool require_same_class = true);

/// Per-query average precision of `relevant` items ranked by descending
/// score, ties broken by lower index first.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& relevant);

struct RetrievalResult {
  double map = 0;
  double knn_accuracy = 0;
  int k = 5;
  int queries = 0;
};

/// Leave-one-out cosine retrieval over class ids. Queries come from classes
/// with at least two records; singleton classes only join the gallery.
RetrievalResult retrieval_eval(const std::vector<EmbeddingRecord>& records, int k = 5);

enum class Normalization { None, Standardize, Robust };
enum class Whitening { None, PCA, ZCA };

struct Postprocess {
  Normalization norm = Normalization::None;
  Whitening whiten = Whitening::None;
  std::string name() const;
};

/// Post-processing fitted on a reference set.
class FittedPostprocess {
 public:
  FittedPostprocess(const Postprocess& p, const std::vector<EmbeddingRecord>& reference, double eps = 1e-6);
  std::vector<EmbeddingRecord> apply(const std::vector<EmbeddingRecord>& records) const;
  const Postprocess& spec() const { return spec_; }

 private:
  Postprocess spec_;
  std::vector<double> center_, scale_;
  std::vector<double> transform_;  ///< row-major [D_out, D]
  std::vector<double> mean_;
  int64_t dim_ = 0;
};

struct PostprocessSelection {
  Postprocess best;
  RetrievalResult best_result;
  std::vector<std::pair<Postprocess, RetrievalResult>> all;
};

/// Tries every normalisation x whitening combination (fit on `validation`)
/// and keeps the one with the highest validation mAP.
PostprocessSelection select_postprocess(const std::vector<EmbeddingRecord>& validation, int k = 5);

struct ProbeConfig {
  int hidden_dim = 128;
  int max_epochs = 200;
  int patience = 20;
  int batch_size = 64;
  double lr = 1e-3;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  uint64_t seed = 0;
};

struct ProbeResult {
  double macro_map = 0;
  std::vector<double> per_label_ap;  ///< NaN for excluded labels
  std::vector<int> excluded_labels;
  int best_epoch = 0;
  /// Macro mAP of the selected probe on each transfer set.
  std::vector<double> transfer_map;
};

/// 3-layer MLP on standardised frozen embeddings, sigmoid focal loss, early
/// stopping on validation macro mAP. Transfer sets are scored by the selected
/// probe without influencing training or selection.
ProbeResult linear_probe(const std::vector<EmbeddingRecord>& train, const std::vector<EmbeddingRecord>& val,
                         const ProbeConfig& cfg = {},
                         const std::vector<std::vector<EmbeddingRecord>>& transfer = {});

struct CosineDiagnostic {
  int drop_count = 0;
  std::vector<double> intermediate;  ///< pooled context-branch output
  std::vector<double> final_cls;

  double median_intermediate() const;
  double median_final() const;
};

/// Cosine similarity between full-context and channel-dropped forward
/// passes. Every sample contributes one value per size-c subset of its
/// context channels.
std::vector<CosineDiagnostic> cosine_diagnostic(const Encoder& model, const Dataset& data,
                                                const std::vector<int>& drop_counts, int batch_size = 64);

/// Cosine similarity; exactly 1 for bitwise-equal inputs.
double cosine(std::span<const double> a, std::span<const double> b);
double median(std::vector<double> v);

/// Embedding table: header `sample_id,level,class_id,group_id,fov_id,well_id,labels,e0..eD-1`.
void write_embeddings_csv(const std::vector<EmbeddingRecord>& records, const std::string& path);
std::vector<EmbeddingRecord> read_embeddings_csv(const std::string& path);

}  // namespace c3r
