#include "c3r/encoder.hpp"

#include <algorithm>

#include "c3r/json_util.hpp"

namespace c3r {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&key](const char* a) { return key == a; });
    if (!ok) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

void EncoderConfig::validate() const {
  if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("encoder.embed_dim must be even and >= 2");
  if (heads < 1 || embed_dim % heads != 0) throw ConfigError("encoder.embed_dim must be divisible by encoder.heads");
  if (shared_depth < 1) throw ConfigError("encoder.shared_depth must be >= 1");
  if (branch_depth < 0) throw ConfigError("encoder.branch_depth must be >= 0");
  if (mlp_ratio <= 0) throw ConfigError("encoder.mlp_ratio must be positive");
  if (in_channels < 1) throw ConfigError("encoder.in_channels must be >= 1");
  if (arch == Architecture::CCE && branch_depth > 0) {
    if (branch_heads() < 1 || branch_dim() % branch_heads() != 0)
      throw ConfigError("encoder: branch width " + std::to_string(branch_dim()) + " not divisible by branch heads " +
                        std::to_string(branch_heads()));
  }
  stem().validate();
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"arch", c.arch == Architecture::CCE ? "cce" : "baseline"},
          {"embed_dim", c.embed_dim},
          {"heads", c.heads},
          {"branch_depth", c.branch_depth},
          {"shared_depth", c.shared_depth},
          {"mlp_ratio", c.mlp_ratio},
          {"aggregation", c.aggregation == Aggregation::Pre ? "pre" : "post"},
          {"flip_groups", c.flip_groups},
          {"instance_norm", c.instance_norm},
          {"patch_size", c.patch_size},
          {"image_size", c.image_size},
          {"in_channels", c.in_channels}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  const std::string sec = "encoder";
  reject_unknown_keys(j,
                      {"arch", "embed_dim", "heads", "branch_depth", "shared_depth", "mlp_ratio", "aggregation",
                       "flip_groups", "instance_norm", "patch_size", "image_size", "in_channels"},
                      sec);
  EncoderConfig c;
  std::string arch = "cce", agg = "pre";
  read_opt(j, "arch", arch, sec);
  read_opt(j, "aggregation", agg, sec);
  if (arch == "cce") c.arch = Architecture::CCE;
  else if (arch == "baseline") c.arch = Architecture::Baseline;
  else throw ConfigError("encoder.arch: expected 'cce' or 'baseline', got '" + arch + "'");
  if (agg == "pre") c.aggregation = Aggregation::Pre;
  else if (agg == "post") c.aggregation = Aggregation::Post;
  else throw ConfigError("encoder.aggregation: expected 'pre' or 'post', got '" + agg + "'");
  read_opt(j, "embed_dim", c.embed_dim, sec);
  read_opt(j, "heads", c.heads, sec);
  read_opt(j, "branch_depth", c.branch_depth, sec);
  read_opt(j, "shared_depth", c.shared_depth, sec);
  read_opt(j, "mlp_ratio", c.mlp_ratio, sec);
  read_opt(j, "flip_groups", c.flip_groups, sec);
  read_opt(j, "instance_norm", c.instance_norm, sec);
  read_opt(j, "patch_size", c.patch_size, sec);
  read_opt(j, "image_size", c.image_size, sec);
  read_opt(j, "in_channels", c.in_channels, sec);
  c.validate();
  return c;
}

ag::Var branch_encode_pre(const ag::Var& tokens, const ParamStore& ps, const std::string& prefix, int depth, int heads) {
  auto h = ag::mean_axis1(tokens);
  for (int i = 0; i < depth; ++i) h = nn::apply_block(ps, prefix + "." + std::to_string(i), h, heads);
  return h;
}

ag::Var branch_encode_post(const ag::Var& tokens, const ParamStore& ps, const std::string& prefix, int depth, int heads) {
  const auto& s = tokens->value.shape();
  if (s.size() != 4) throw ShapeError("branch_encode_post: expected [B, C, N, d]");
  auto h = ag::reshape(tokens, {s[0] * s[1], s[2], s[3]});
  for (int i = 0; i < depth; ++i) h = nn::apply_block(ps, prefix + "." + std::to_string(i), h, heads);
  return ag::mean_axis1(ag::reshape(h, s));
}

ag::Var fuse(const ag::Var& ctx, const ag::Var& con, const ParamStore& ps) {
  const auto& a = ctx->value.shape();
  const auto& b = con->value.shape();
  if (a.size() != 3 || b.size() != 3 || a[0] != b[0] || a[1] != b[1])
    throw ShapeError("fuse: " + shape_str(a) + " vs " + shape_str(b));
  auto joined = nn::apply_layer_norm(ps, "fuse.norm", ag::concat_last(ctx, con));
  return ag::prepend_token(joined, ps.get("cls_token"));
}

ParamStore init_encoder_params(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore ps;
  const int64_t D = cfg.embed_dim;
  if (cfg.arch == Architecture::CCE) {
    const auto stem = cfg.stem();
    init_group_stem(ps, "ctx", stem, rng);
    init_group_stem(ps, "con", stem, rng);
    for (const char* g : {"ctx", "con"})
      for (int i = 0; i < cfg.branch_depth; ++i)
        nn::init_block(ps, std::string("branch.") + g + "." + std::to_string(i), cfg.branch_dim(), cfg.mlp_ratio, rng);
    nn::init_layer_norm(ps, "fuse.norm", D);
    ps.add("cls_token", trunc_normal({D}, 0.02, rng));
  } else {
    const int64_t pp = static_cast<int64_t>(cfg.patch_size) * cfg.patch_size;
    const int64_t N = cfg.stem().num_tokens();
    nn::init_linear(ps, "stem.joint", cfg.in_channels * pp, D, rng);
    ps.add("pos_embed", trunc_normal({N, D}, 0.02, rng));
    ps.add("cls_pos", trunc_normal({D}, 0.02, rng));
    ps.add("mask_token", Tensor::zeros({D}));
    ps.add("cls_token", trunc_normal({D}, 0.02, rng));
  }
  for (int i = 0; i < cfg.shared_depth; ++i) nn::init_block(ps, "blocks." + std::to_string(i), D, cfg.mlp_ratio, rng);
  nn::init_layer_norm(ps, "norm", D);
  return ps;
}

Encoder::Encoder(EncoderConfig cfg, GroupSchema schema, uint64_t seed)
    : cfg_(cfg), schema_(std::move(schema)), params_(init_encoder_params(cfg, seed)) {
  if (cfg_.arch == Architecture::Baseline && cfg_.in_channels != schema_.total())
    throw ConfigError("baseline encoder expects " + std::to_string(cfg_.in_channels) + " channels but schema has " +
                      std::to_string(schema_.total()));
}

Encoder::Encoder(EncoderConfig cfg, GroupSchema schema, ParamStore params)
    : cfg_(cfg), schema_(std::move(schema)), params_(std::move(params)) {
  cfg_.validate();
  const auto expected = init_encoder_params(cfg_, 0);
  if (expected.names() != params_.names()) throw ConfigError("parameter set does not match encoder config");
  for (size_t i = 0; i < expected.size(); ++i)
    if (expected.vars()[i]->value.shape() != params_.vars()[i]->value.shape())
      throw ConfigError("parameter " + expected.names()[i] + " has shape " + shape_str(params_.vars()[i]->value.shape()) +
                        ", expected " + shape_str(expected.vars()[i]->value.shape()));
}

EncoderOutput Encoder::trunk(const ag::Var& tokens_with_cls, ag::Var context_branch) const {
  auto h = tokens_with_cls;
  for (int i = 0; i < cfg_.shared_depth; ++i) h = nn::apply_block(params_, "blocks." + std::to_string(i), h, cfg_.heads);
  h = nn::apply_layer_norm(params_, "norm", h);
  const auto& s = h->value.shape();
  EncoderOutput out;
  out.cls = ag::reshape(ag::slice_tokens(h, 0, 1), {s[0], s[2]});
  out.patches = ag::slice_tokens(h, 1, s[1]);
  out.context_branch = std::move(context_branch);
  return out;
}

EncoderOutput Encoder::forward_cce(const GroupedBatch& x, const ForwardOptions& opts) const {
  x.validate();
  const auto stem = cfg_.stem();
  const Tensor ctx_in = cfg_.instance_norm ? instance_normalize(x.context) : x.context;
  const Tensor con_in = cfg_.instance_norm ? instance_normalize(x.content) : x.content;
  auto ctx_tokens = tokenize_group(ctx_in, params_, "ctx", stem, opts.patch_mask);
  auto con_tokens = tokenize_group(con_in, params_, "con", stem, opts.patch_mask);

  const bool flip = opts.flip_groups.value_or(cfg_.flip_groups);
  // Flipping re-routes the groups through each other's branch; stems stay put
  // and each branch keeps its slot in the fused feature.
  const auto& into_ctx_branch = flip ? con_tokens : ctx_tokens;
  const auto& into_con_branch = flip ? ctx_tokens : con_tokens;
  auto encode = cfg_.aggregation == Aggregation::Pre ? branch_encode_pre : branch_encode_post;
  auto ctx_slot = encode(into_ctx_branch, params_, "branch.ctx", cfg_.branch_depth, cfg_.branch_heads());
  auto con_slot = encode(into_con_branch, params_, "branch.con", cfg_.branch_depth, cfg_.branch_heads());
  auto context_branch = flip ? con_slot : ctx_slot;
  return trunk(fuse(ctx_slot, con_slot, params_), context_branch);
}

EncoderOutput Encoder::forward_baseline(const Tensor& x, const ForwardOptions& opts) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
    throw ShapeError("baseline encoder expects [B, " + std::to_string(cfg_.in_channels) + ", h, w], got " + shape_str(x.shape()));
  const int p = cfg_.patch_size;
  if (x.dim(2) % p != 0 || x.dim(3) % p != 0) throw ShapeError("baseline encoder: size not divisible by patch");
  const int64_t B = x.dim(0), D = cfg_.embed_dim;
  const int gh = static_cast<int>(x.dim(2) / p), gw = static_cast<int>(x.dim(3) / p);
  const int64_t N = static_cast<int64_t>(gh) * gw;
  const Tensor in = cfg_.instance_norm ? instance_normalize(x) : x;
  auto tokens = nn::apply_linear(params_, "stem.joint", ag::constant(patchify_joint(in, p)));  // [B*N, D]
  if (opts.patch_mask) {
    if (static_cast<int64_t>(opts.patch_mask->size()) != B * N) throw ShapeError("baseline encoder: mask must have B*N entries");
    tokens = ag::replace_rows(tokens, *opts.patch_mask, params_.get("mask_token"));
  }
  tokens = ag::add_tiled(tokens, positional_table(params_.get("pos_embed"), cfg_.stem().grid(), gh, gw));
  tokens = ag::reshape(tokens, {B, N, D});
  auto cls = ag::add(params_.get("cls_token"), params_.get("cls_pos"));
  return trunk(ag::prepend_token(tokens, cls), nullptr);
}

EncoderOutput Encoder::forward(const GroupedBatch& x, const ForwardOptions& opts) const {
  if (cfg_.arch == Architecture::CCE) return forward_cce(x, opts);
  if (x.context.dim(1) != schema_.num_context() || x.content.dim(1) != schema_.num_concept())
    throw ShapeError("baseline encoder cannot run on a partial channel set");
  return forward_baseline(merge_groups(x, schema_), opts);
}

EncoderOutput Encoder::forward(const Tensor& x, const ForwardOptions& opts) const {
  if (cfg_.arch == Architecture::Baseline) return forward_baseline(x, opts);
  return forward_cce(split_groups(x, schema_), opts);
}

Tensor Encoder::embed(const GroupedBatch& x) const {
  ag::NoGradGuard guard;
  return forward(x).cls->value;
}

ParamBreakdown count_parameters(const EncoderConfig& cfg) {
  cfg.validate();
  ParamBreakdown b;
  const int64_t D = cfg.embed_dim;
  const int64_t pp = static_cast<int64_t>(cfg.patch_size) * cfg.patch_size;
  const int64_t N = cfg.stem().num_tokens();
  if (cfg.arch == Architecture::CCE) {
    const int64_t d = cfg.branch_dim();
    b.stems = 2 * (pp * d + d);
    b.positional = 2 * N * d;
    b.tokens = 2 * d + D;  // two mask tokens + cls
    b.fusion_norm = 2 * D;
    b.branches = 2 * cfg.branch_depth * nn::block_param_count(d, cfg.mlp_ratio);
  } else {
    b.stems = cfg.in_channels * pp * D + D;
    b.positional = N * D + D;  // patch table + cls position
    b.tokens = 2 * D;          // mask + cls
  }
  b.trunk = cfg.shared_depth * nn::block_param_count(D, cfg.mlp_ratio);
  b.final_norm = 2 * D;
  return b;
}

EncoderConfig baseline_config(const EncoderConfig& cfg, int depth) {
  EncoderConfig base = cfg;
  base.arch = Architecture::Baseline;
  base.branch_depth = 0;
  base.shared_depth = depth;
  base.flip_groups = false;
  return base;
}

int normalized_shared_depth(int baseline_depth, const EncoderConfig& cfg) {
  const int64_t budget = count_parameters(baseline_config(cfg, baseline_depth)).total();
  int best = 0;
  EncoderConfig c = cfg;
  for (int depth = 1; depth <= baseline_depth + 1; ++depth) {
    c.shared_depth = depth;
    if (count_parameters(c).total() <= budget) best = depth;
  }
  return best;
}

}  // namespace c3r
