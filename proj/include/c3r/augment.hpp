#pragma once

#include "c3r/nn.hpp"

namespace c3r {

/// Crop window in source pixels plus flips, shared by all channels of a sample.
struct CropParams {
  double y0 = 0, x0 = 0, h = 0, w = 0;
  bool hflip = false;
  bool vflip = false;
};

struct CropConfig {
  int size = 32;
  double scale_lo = 0.4;  ///< fraction of the source area
  double scale_hi = 1.0;
  double ratio_lo = 3.0 / 4.0;
  double ratio_hi = 4.0 / 3.0;
  bool flips = true;
};

CropParams sample_crop(int64_t height, int64_t width, const CropConfig& cfg, Rng& rng);

/// Bilinear resample of sample b of [B, C, H, W] through `crop` to [C, size, size].
Tensor crop_resize(const Tensor& batch, int64_t b, const CropParams& crop, int size);

/// Independent random resized crop per sample -> [B, C, size, size].
Tensor random_resized_crops(const Tensor& batch, const CropConfig& cfg, Rng& rng);

}  // namespace c3r
