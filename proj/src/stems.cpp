#include "c3r/stems.hpp"

#include <algorithm>
#include <cmath>

namespace c3r {

void StemConfig::validate() const {
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (token_dim < 1) throw ConfigError("token dim must be >= 1");
  if (image_size < patch_size || image_size % patch_size != 0)
    throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
}

Tensor instance_normalize(const Tensor& x, double eps) {
  if (x.rank() != 4) throw ShapeError("instance_normalize: expected [B, C, h, w], got " + shape_str(x.shape()));
  const int64_t planes = x.dim(0) * x.dim(1);
  const int64_t hw = x.dim(2) * x.dim(3);
  if (hw < 2) throw ShapeError("instance_normalize: need at least 2 pixels per plane");
  Tensor out(x.shape());
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * hw;
    double* dst = out.data() + p * hw;
    if (std::all_of(src, src + hw, [&](double v) { return v == src[0]; })) continue;
    double mu = 0.0;
    for (int64_t i = 0; i < hw; ++i) mu += src[i];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (int64_t i = 0; i < hw; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * inv;
  }
  return out;
}

Tensor patchify(const Tensor& x, int p) {
  if (x.rank() != 4) throw ShapeError("patchify: expected [B, C, h, w]");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % p != 0 || W % p != 0) throw ShapeError("patchify: " + shape_str(x.shape()) + " not divisible by patch " + std::to_string(p));
  const int64_t gh = H / p, gw = W / p;
  Tensor out({B * C * gh * gw, static_cast<int64_t>(p) * p});
  int64_t row = 0;
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = x.data() + bc * H * W;
    for (int64_t i = 0; i < gh; ++i)
      for (int64_t j = 0; j < gw; ++j, ++row) {
        double* dst = out.data() + row * p * p;
        for (int64_t u = 0; u < p; ++u)
          std::copy_n(plane + (i * p + u) * W + j * p, p, dst + u * p);
      }
  }
  return out;
}

Tensor patchify_joint(const Tensor& x, int p) {
  if (x.rank() != 4) throw ShapeError("patchify_joint: expected [B, C, h, w]");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % p != 0 || W % p != 0) throw ShapeError("patchify_joint: size not divisible by patch");
  const int64_t gh = H / p, gw = W / p, pp = static_cast<int64_t>(p) * p;
  Tensor out({B * gh * gw, C * pp});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < gh; ++i)
      for (int64_t j = 0; j < gw; ++j) {
        double* dst = out.data() + ((b * gh + i) * gw + j) * C * pp;
        for (int64_t c = 0; c < C; ++c) {
          const double* plane = x.data() + (b * C + c) * H * W;
          for (int64_t u = 0; u < p; ++u) std::copy_n(plane + (i * p + u) * W + j * p, p, dst + c * pp + u * p);
        }
      }
  return out;
}

Tensor grid_resample_matrix(int src, int dst_h, int dst_w) {
  Tensor m({static_cast<int64_t>(dst_h) * dst_w, static_cast<int64_t>(src) * src});
  auto taps = [src](int dst, int i) {
    // Half-pixel aligned source coordinate, clamped to the grid.
    double s = (i + 0.5) * static_cast<double>(src) / dst - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, src - 1);
    return std::tuple<int, int, double>{lo, hi, s - lo};
  };
  for (int i = 0; i < dst_h; ++i) {
    auto [r0, r1, fr] = taps(dst_h, i);
    for (int j = 0; j < dst_w; ++j) {
      auto [c0, c1, fc] = taps(dst_w, j);
      const int64_t row = static_cast<int64_t>(i) * dst_w + j;
      m.at({row, static_cast<int64_t>(r0) * src + c0}) += (1 - fr) * (1 - fc);
      m.at({row, static_cast<int64_t>(r0) * src + c1}) += (1 - fr) * fc;
      m.at({row, static_cast<int64_t>(r1) * src + c0}) += fr * (1 - fc);
      m.at({row, static_cast<int64_t>(r1) * src + c1}) += fr * fc;
    }
  }
  return m;
}

std::string stem_prefix(const std::string& group) { return "stem." + group; }

void init_group_stem(ParamStore& ps, const std::string& group, const StemConfig& cfg, Rng& rng) {
  const int64_t pp = static_cast<int64_t>(cfg.patch_size) * cfg.patch_size;
  nn::init_linear(ps, stem_prefix(group), pp, cfg.token_dim, rng);
  ps.add("pos_embed." + group, trunc_normal({cfg.num_tokens(), cfg.token_dim}, 0.02, rng));
  ps.add("mask_token." + group, Tensor::zeros({cfg.token_dim}));
}

ag::Var positional_table(const ag::Var& table, int table_grid, int gh, int gw) {
  if (gh == table_grid && gw == table_grid) return table;
  return ag::matmul_fixed(grid_resample_matrix(table_grid, gh, gw), table);
}

ag::Var tokenize_group(const Tensor& x_group, const ParamStore& ps, const std::string& group, const StemConfig& cfg,
                       const std::vector<bool>* patch_mask) {
  cfg.validate();
  if (x_group.rank() != 4) throw ShapeError("tokenize_group: expected [B, C, h, w], got " + shape_str(x_group.shape()));
  const int p = cfg.patch_size;
  const int64_t B = x_group.dim(0), C = x_group.dim(1);
  if (x_group.dim(2) % p != 0 || x_group.dim(3) % p != 0)
    throw ShapeError("tokenize_group: spatial size " + shape_str(x_group.shape()) + " not divisible by patch " + std::to_string(p));
  const int gh = static_cast<int>(x_group.dim(2) / p), gw = static_cast<int>(x_group.dim(3) / p);
  const int64_t N = static_cast<int64_t>(gh) * gw;
  const int64_t d = cfg.token_dim;

  auto tokens = nn::apply_linear(ps, stem_prefix(group), ag::constant(patchify(x_group, p)));  // [B*C*N, d]
  if (patch_mask) {
    if (static_cast<int64_t>(patch_mask->size()) != B * N) throw ShapeError("tokenize_group: mask must have B*N entries");
    std::vector<bool> rows(static_cast<size_t>(B * C * N));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t n = 0; n < N; ++n) rows[static_cast<size_t>((b * C + c) * N + n)] = (*patch_mask)[static_cast<size_t>(b * N + n)];
    tokens = ag::replace_rows(tokens, rows, ps.get("mask_token." + group));
  }
  auto pos = positional_table(ps.get("pos_embed." + group), cfg.grid(), gh, gw);
  tokens = ag::add_tiled(tokens, pos);
  return ag::reshape(tokens, {B, C, N, d});
}

ag::Var naive_grouped_stem(const Tensor& x, const GroupSchema& schema, const ParamStore& ps, const StemConfig& cfg) {
  auto g = split_groups(x, schema);
  auto ctx = ag::mean_axis1(tokenize_group(instance_normalize(g.context), ps, "ctx", cfg));
  auto con = ag::mean_axis1(tokenize_group(instance_normalize(g.content), ps, "con", cfg));
  return ag::concat_last(ctx, con);
}

}  // namespace c3r
