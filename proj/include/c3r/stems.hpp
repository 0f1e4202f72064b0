#pragma once

#include <string>
#include <vector>

#include "c3r/channel_schema.hpp"
#include "c3r/nn.hpp"

namespace c3r {

struct StemConfig {
  int patch_size = 8;
  int token_dim = 32;  ///< d
  int image_size = 32;

  int grid() const { return image_size / patch_size; }
  int num_tokens() const { return grid() * grid(); }
  void validate() const;
};

constexpr double kInstanceNormEps = 1e-5;

/// Standardises every (sample, channel) plane of [B, C, h, w] to zero mean and
/// unit variance. Constant planes map to zeros.
Tensor instance_normalize(const Tensor& x, double eps = kInstanceNormEps);

/// Rows of non-overlapping patches: [B, C, h, w] -> [B*C*N, p*p], ordered
/// (sample, channel, patch row-major).
Tensor patchify(const Tensor& x, int patch_size);
/// Same, with all channels of a patch in one row: [B*N, C*p*p].
Tensor patchify_joint(const Tensor& x, int patch_size);

/// Bilinear resampling matrix mapping a src x src grid onto dst_h x dst_w
/// (half-pixel centres). Rows sum to one.
Tensor grid_resample_matrix(int src, int dst_h, int dst_w);

/// Names of the per-group stem parameters ("ctx" or "con").
std::string stem_prefix(const std::string& group);
void init_group_stem(ParamStore& ps, const std::string& group, const StemConfig& cfg, Rng& rng);

/// Positional table for the given token grid, resampled if it differs from
/// the configured grid.
ag::Var positional_table(const ag::Var& table, int table_grid, int gh, int gw);

/// Tokenises each channel of a group with the group's shared stem and adds
/// the group's positional table. `patch_mask` (optional, size B*N) marks
/// positions whose patch embedding is replaced by the group mask token; the
/// same mask applies to every channel of a sample. Output [B, C_g, N, d].
ag::Var tokenize_group(const Tensor& x_group, const ParamStore& ps, const std::string& group, const StemConfig& cfg,
                       const std::vector<bool>* patch_mask = nullptr);

/// Grouped stem without branches: normalise, tokenise each group, mean-pool
/// over channels and concatenate the two pooled maps -> [B, N, 2d].
ag::Var naive_grouped_stem(const Tensor& x, const GroupSchema& schema, const ParamStore& ps, const StemConfig& cfg);

}  // namespace c3r
