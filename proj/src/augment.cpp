#include "c3r/augment.hpp"

#include <algorithm>
#include <cmath>

namespace c3r {

CropParams sample_crop(int64_t height, int64_t width, const CropConfig& cfg, Rng& rng) {
  if (cfg.size < 1 || cfg.scale_lo <= 0 || cfg.scale_hi > 1 || cfg.scale_lo > cfg.scale_hi)
    throw ConfigError("crop: invalid size or scale range");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double area = static_cast<double>(height * width);
  const double log_lo = std::log(cfg.ratio_lo), log_hi = std::log(cfg.ratio_hi);
  CropParams c;
  c.h = static_cast<double>(height);
  c.w = static_cast<double>(width);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * (cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * u01(rng));
    const double ratio = std::exp(log_lo + (log_hi - log_lo) * u01(rng));
    const double w = std::sqrt(target * ratio), h = std::sqrt(target / ratio);
    if (w <= static_cast<double>(width) && h <= static_cast<double>(height)) {
      c.h = h;
      c.w = w;
      break;
    }
  }
  c.y0 = (static_cast<double>(height) - c.h) * u01(rng);
  c.x0 = (static_cast<double>(width) - c.w) * u01(rng);
  if (cfg.flips) {
    c.hflip = u01(rng) < 0.5;
    c.vflip = u01(rng) < 0.5;
  }
  return c;
}

Tensor crop_resize(const Tensor& batch, int64_t b, const CropParams& crop, int size) {
  const int64_t C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor out({C, size, size});
  const double sy = crop.h / size, sx = crop.w / size;
  for (int i = 0; i < size; ++i) {
    const int ii = crop.vflip ? size - 1 - i : i;
    const double y = std::clamp(crop.y0 + (ii + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const int64_t y0 = static_cast<int64_t>(std::floor(y));
    const int64_t y1 = std::min(y0 + 1, H - 1);
    const double fy = y - static_cast<double>(y0);
    for (int j = 0; j < size; ++j) {
      const int jj = crop.hflip ? size - 1 - j : j;
      const double x = std::clamp(crop.x0 + (jj + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const int64_t x0 = static_cast<int64_t>(std::floor(x));
      const int64_t x1 = std::min(x0 + 1, W - 1);
      const double fx = x - static_cast<double>(x0);
      for (int64_t c = 0; c < C; ++c) {
        const double* p = batch.data() + ((b * C + c) * H) * W;
        const double top = p[y0 * W + x0] * (1 - fx) + p[y0 * W + x1] * fx;
        const double bot = p[y1 * W + x0] * (1 - fx) + p[y1 * W + x1] * fx;
        out[(c * size + i) * size + j] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Tensor random_resized_crops(const Tensor& batch, const CropConfig& cfg, Rng& rng) {
  if (batch.rank() != 4) throw ShapeError("random_resized_crops: expected [B, C, H, W]");
  const int64_t B = batch.dim(0), C = batch.dim(1);
  Tensor out({B, C, cfg.size, cfg.size});
  const int64_t plane = C * cfg.size * cfg.size;
  for (int64_t b = 0; b < B; ++b) {
    const auto crop = sample_crop(batch.dim(2), batch.dim(3), cfg, rng);
    const Tensor one = crop_resize(batch, b, crop, cfg.size);
    std::copy(one.data(), one.data() + plane, out.data() + b * plane);
  }
  return out;
}

}  // namespace c3r
