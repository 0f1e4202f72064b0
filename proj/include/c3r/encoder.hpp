#pragma once

// Context-Concept Encoder and the plain ViT baseline it is compared against.
//
// CCE pipeline: split groups -> per-channel instance norm -> grouped stems
// (one stem per group, shared over the group's channels) -> half-width
// branch layers per group with channel mean-pooling before (Pre) or after
// (Post) the branch -> concat + LayerNorm -> cls token -> full-width trunk.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "c3r/channel_schema.hpp"
#include "c3r/nn.hpp"
#include "c3r/stems.hpp"
#include "json.hpp"

namespace c3r {

enum class Architecture { Baseline, CCE };
enum class Aggregation { Pre, Post };

struct EncoderConfig {
  Architecture arch = Architecture::CCE;
  int embed_dim = 64;  ///< D; branches run at D/2
  int heads = 4;       ///< trunk heads; branches use heads/2
  int branch_depth = 1;
  int shared_depth = 2;
  double mlp_ratio = 4.0;
  Aggregation aggregation = Aggregation::Pre;
  bool flip_groups = false;
  bool instance_norm = true;
  int patch_size = 8;
  int image_size = 32;
  /// Input channels of the baseline stem (and of the baseline a CCE is
  /// parameter-matched against).
  int in_channels = 4;

  int branch_dim() const { return embed_dim / 2; }
  int branch_heads() const { return heads / 2; }
  StemConfig stem() const { return {patch_size, arch == Architecture::CCE ? branch_dim() : embed_dim, image_size}; }
  void validate() const;
};

nlohmann::json to_json(const EncoderConfig& cfg);
/// Unknown keys are rejected with ConfigError.
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

struct EncoderOutput {
  ag::Var cls;              ///< [B, D]
  ag::Var patches;          ///< [B, N, D]
  ag::Var context_branch;   ///< [B, N, d] pooled output of the branch fed with context tokens (CCE only)
};

struct ForwardOptions {
  /// Per-sample patch mask, size B*N (see tokenize_group).
  const std::vector<bool>* patch_mask = nullptr;
  /// Overrides EncoderConfig::flip_groups for this call.
  std::optional<bool> flip_groups;
};

// Building blocks, exposed for testing and diagnostics.

/// Mean-pool over channels, then `depth` blocks on [B, N, d].
ag::Var branch_encode_pre(const ag::Var& tokens, const ParamStore& ps, const std::string& prefix, int depth, int heads);
/// `depth` blocks on every channel independently, then mean-pool -> [B, N, d].
ag::Var branch_encode_post(const ag::Var& tokens, const ParamStore& ps, const std::string& prefix, int depth, int heads);
/// LayerNorm(concat(ctx, con)) with the cls token prepended -> [B, N+1, 2d].
ag::Var fuse(const ag::Var& ctx, const ag::Var& con, const ParamStore& ps);

class Encoder {
 public:
  Encoder(EncoderConfig cfg, GroupSchema schema, uint64_t seed);
  Encoder(EncoderConfig cfg, GroupSchema schema, ParamStore params);

  const EncoderConfig& config() const { return cfg_; }
  const GroupSchema& schema() const { return schema_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  void set_flip_groups(bool flip) { cfg_.flip_groups = flip; }

  EncoderOutput forward(const GroupedBatch& x, const ForwardOptions& opts = {}) const;
  EncoderOutput forward(const Tensor& x, const ForwardOptions& opts = {}) const;

  /// Inference-only cls embeddings [B, D].
  Tensor embed(const GroupedBatch& x) const;

 private:
  EncoderOutput forward_cce(const GroupedBatch& x, const ForwardOptions& opts) const;
  EncoderOutput forward_baseline(const Tensor& x, const ForwardOptions& opts) const;
  EncoderOutput trunk(const ag::Var& tokens_with_cls, ag::Var context_branch) const;

  EncoderConfig cfg_;
  GroupSchema schema_;
  ParamStore params_;
};

/// Creates the parameter set of an encoder (deterministic given the seed).
ParamStore init_encoder_params(const EncoderConfig& cfg, uint64_t seed);

struct ParamBreakdown {
  int64_t stems = 0;
  int64_t positional = 0;
  int64_t tokens = 0;  ///< cls and mask tokens
  int64_t fusion_norm = 0;
  int64_t branches = 0;
  int64_t trunk = 0;
  int64_t final_norm = 0;

  int64_t total() const { return stems + positional + tokens + fusion_norm + branches + trunk + final_norm; }
};

/// Closed-form parameter count of the encoder described by cfg (projection
/// heads excluded).
ParamBreakdown count_parameters(const EncoderConfig& cfg);

/// Baseline ViT config matching cfg's width, patching and input channels.
EncoderConfig baseline_config(const EncoderConfig& cfg, int depth);

/// Largest shared depth for which the CCE total stays <= the baseline ViT of
/// `baseline_depth` layers. Returns 0 if even one shared layer overshoots.
int normalized_shared_depth(int baseline_depth, const EncoderConfig& cfg);

}  // namespace c3r
