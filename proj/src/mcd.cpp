#include "c3r/mcd.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "c3r/json_util.hpp"

namespace c3r {

void DropPolicy::validate(int num_context) const {
  if (mode == DropMode::None) return;
  if (c < 0) throw ConfigError("drop.c must be >= 0");
  if (c >= num_context)
    throw ConfigError("drop.c=" + std::to_string(c) + " would remove every context channel (C1=" +
                      std::to_string(num_context) + ")");
}

nlohmann::json to_json(const DropPolicy& p) {
  static const char* names[] = {"none", "fixed_student", "uniform_student", "student_and_teacher"};
  return {{"mode", names[static_cast<int>(p.mode)]}, {"c", p.c}};
}

DropPolicy drop_policy_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"mode", "c"}, "drop");
  DropPolicy p;
  std::string mode = "none";
  read_opt(j, "mode", mode, "drop");
  read_opt(j, "c", p.c, "drop");
  if (mode == "none") p.mode = DropMode::None;
  else if (mode == "fixed_student") p.mode = DropMode::FixedStudent;
  else if (mode == "uniform_student") p.mode = DropMode::UniformStudent;
  else if (mode == "student_and_teacher") p.mode = DropMode::StudentAndTeacher;
  else throw ConfigError("drop.mode: unknown value '" + mode + "'");
  if (p.c < 0) throw ConfigError("drop.c must be >= 0");
  return p;
}

int sample_drop_count(const DropPolicy& policy, int num_context, Rng& rng) {
  policy.validate(num_context);
  switch (policy.mode) {
    case DropMode::None: return 0;
    case DropMode::UniformStudent: return std::uniform_int_distribution<int>(0, policy.c)(rng);
    default: return policy.c;
  }
}

std::vector<int> sample_dropped_positions(int num_context, int c, Rng& rng) {
  if (c < 0 || c >= num_context)
    throw ConfigError("cannot drop " + std::to_string(c) + " of " + std::to_string(num_context) + " context channels");
  std::vector<int> all(static_cast<size_t>(num_context));
  std::iota(all.begin(), all.end(), 0);
  // Partial Fisher-Yates: the first c entries form a uniform subset.
  for (int i = 0; i < c; ++i) {
    const int j = std::uniform_int_distribution<int>(i, num_context - 1)(rng);
    std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
  }
  std::vector<int> out(all.begin(), all.begin() + c);
  std::sort(out.begin(), out.end());
  return out;
}

Tensor remove_channels(const Tensor& x, const std::vector<int>& dropped) {
  if (x.rank() != 4) throw ShapeError("remove_channels: expected [B, C, h, w]");
  std::vector<int> keep;
  for (int i = 0; i < x.dim(1); ++i)
    if (!std::binary_search(dropped.begin(), dropped.end(), i)) keep.push_back(i);
  if (keep.empty()) throw ConfigError("cannot drop every context channel");
  return gather_axis1(x, keep);
}

DropResult drop_channels(const Tensor& x_context, int c, Rng& rng) {
  if (x_context.rank() != 4) throw ShapeError("drop_channels: expected [B, C1, h, w]");
  DropResult r;
  r.dropped = sample_dropped_positions(static_cast<int>(x_context.dim(1)), c, rng);
  r.kept = c == 0 ? x_context : remove_channels(x_context, r.dropped);
  return r;
}

int64_t masked_count(int64_t num_tokens, double ratio) {
  return static_cast<int64_t>(std::floor(static_cast<double>(num_tokens) * ratio + 1e-12));
}

std::vector<bool> sample_patch_mask(int64_t batch, int64_t num_tokens, double lo, double hi, Rng& rng) {
  if (!(lo >= 0 && lo <= hi && hi < 1)) throw ConfigError("mask ratio range must satisfy 0 <= lo <= hi < 1");
  std::vector<bool> mask(static_cast<size_t>(batch * num_tokens), false);
  std::uniform_real_distribution<double> ratio(lo, hi);
  std::vector<int64_t> idx(static_cast<size_t>(num_tokens));
  for (int64_t b = 0; b < batch; ++b) {
    const double r = lo == hi ? lo : ratio(rng);
    const int64_t k = masked_count(num_tokens, r);
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = 0; i < k; ++i) {
      const auto j = std::uniform_int_distribution<int64_t>(i, num_tokens - 1)(rng);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      mask[static_cast<size_t>(b * num_tokens + idx[static_cast<size_t>(i)])] = true;
    }
  }
  return mask;
}

MaskedTokens patch_mask(const ag::Var& tokens, const ag::Var& mask_token, double lo, double hi, Rng& rng) {
  const auto& s = tokens->value.shape();
  if (s.size() != 3 && s.size() != 4) throw ShapeError("patch_mask: expected [B, N, d] or [B, C, N, d]");
  const int64_t B = s[0], C = s.size() == 4 ? s[1] : 1, N = s[s.size() - 2], d = s.back();
  MaskedTokens out;
  out.mask = sample_patch_mask(B, N, lo, hi, rng);
  std::vector<bool> rows(static_cast<size_t>(B * C * N));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t n = 0; n < N; ++n) rows[static_cast<size_t>((b * C + c) * N + n)] = out.mask[static_cast<size_t>(b * N + n)];
  out.tokens = ag::reshape(ag::replace_rows(ag::reshape(tokens, {B * C * N, d}), rows, mask_token), s);
  return out;
}

void HeadConfig::validate() const {
  if (hidden_dim < 1 || bottleneck_dim < 1 || prototypes < 2) throw ConfigError("head: dimensions must be positive");
  if (student_temp <= 0 || teacher_temp <= 0 || teacher_temp_final <= 0) throw ConfigError("head: temperatures must be positive");
  if (teacher_temp >= student_temp || teacher_temp_final >= student_temp)
    throw ConfigError("head: teacher temperature must be below the student temperature");
  if (center_momentum <= 0 || center_momentum >= 1) throw ConfigError("head.center_momentum must lie in (0, 1)");
}

double HeadConfig::teacher_temp_at(int64_t step) const {
  return teacher_temp_warmup > 0 ? (step >= teacher_temp_warmup ? teacher_temp_final
                                                                 : teacher_temp + (teacher_temp_final - teacher_temp) *
                                                                                      static_cast<double>(step) / teacher_temp_warmup)
                                 : teacher_temp_final;
}

nlohmann::json to_json(const HeadConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"bottleneck_dim", c.bottleneck_dim},
          {"prototypes", c.prototypes},
          {"student_temp", c.student_temp},
          {"teacher_temp", c.teacher_temp},
          {"teacher_temp_final", c.teacher_temp_final},
          {"teacher_temp_warmup", c.teacher_temp_warmup},
          {"center_momentum", c.center_momentum}};
}

HeadConfig head_config_from_json(const nlohmann::json& j) {
  const std::string sec = "head";
  reject_unknown_keys(j,
                      {"hidden_dim", "bottleneck_dim", "prototypes", "student_temp", "teacher_temp",
                       "teacher_temp_final", "teacher_temp_warmup", "center_momentum"},
                      sec);
  HeadConfig c;
  read_opt(j, "hidden_dim", c.hidden_dim, sec);
  read_opt(j, "bottleneck_dim", c.bottleneck_dim, sec);
  read_opt(j, "prototypes", c.prototypes, sec);
  read_opt(j, "student_temp", c.student_temp, sec);
  read_opt(j, "teacher_temp", c.teacher_temp, sec);
  read_opt(j, "teacher_temp_final", c.teacher_temp_final, sec);
  read_opt(j, "teacher_temp_warmup", c.teacher_temp_warmup, sec);
  read_opt(j, "center_momentum", c.center_momentum, sec);
  c.validate();
  return c;
}

void init_projection_head(ParamStore& ps, const std::string& prefix, int in_dim, const HeadConfig& cfg, Rng& rng) {
  nn::init_linear(ps, prefix + ".fc1", in_dim, cfg.hidden_dim, rng);
  nn::init_linear(ps, prefix + ".fc2", cfg.hidden_dim, cfg.hidden_dim, rng);
  nn::init_linear(ps, prefix + ".fc3", cfg.hidden_dim, cfg.bottleneck_dim, rng);
  nn::init_linear(ps, prefix + ".prototypes", cfg.bottleneck_dim, cfg.prototypes, rng, false);
}

ag::Var head_logits(const ParamStore& ps, const std::string& prefix, const ag::Var& features) {
  auto h = ag::gelu(nn::apply_linear(ps, prefix + ".fc1", features));
  h = ag::gelu(nn::apply_linear(ps, prefix + ".fc2", h));
  h = nn::apply_linear(ps, prefix + ".fc3", h);
  const auto& s = h->value.shape();
  const int64_t rows = h->value.numel() / s.back();
  h = ag::l2_normalize(ag::reshape(h, {rows, s.back()}));
  // Unit-norm prototypes: every logit is a cosine in [-1, 1].
  return ag::linear(h, ag::l2_normalize(ps.get(prefix + ".prototypes.weight")), nullptr);
}

Tensor softmax_rows(const Tensor& logits, double temp, const Tensor& center) {
  const int64_t K = logits.shape().back();
  const int64_t R = logits.numel() / K;
  if (!center.empty() && center.numel() != K) throw ShapeError("softmax_rows: center size mismatch");
  Tensor out({R, K});
  std::vector<double> z(static_cast<size_t>(K));
  for (int64_t r = 0; r < R; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < K; ++k) {
      z[static_cast<size_t>(k)] = (logits[r * K + k] - (center.empty() ? 0.0 : center[k])) / temp;
      m = std::max(m, z[static_cast<size_t>(k)]);
    }
    double se = 0.0;
    for (int64_t k = 0; k < K; ++k) se += std::exp(z[static_cast<size_t>(k)] - m);
    for (int64_t k = 0; k < K; ++k) out[r * K + k] = std::exp(z[static_cast<size_t>(k)] - m) / se;
  }
  return out;
}

Tensor project(const ParamStore& ps, const std::string& prefix, const Tensor& features, bool is_teacher, double temp,
               const Tensor& center) {
  ag::NoGradGuard guard;
  const Tensor logits = head_logits(ps, prefix, ag::constant(features))->value;
  return softmax_rows(logits, temp, is_teacher ? center : Tensor());
}

void update_center(Tensor& center, const Tensor& teacher_logits, double momentum) {
  const int64_t K = teacher_logits.shape().back();
  const int64_t R = teacher_logits.numel() / K;
  if (center.numel() != K) throw ShapeError("update_center: size mismatch");
  for (int64_t k = 0; k < K; ++k) {
    double mean = 0.0;
    for (int64_t r = 0; r < R; ++r) mean += teacher_logits[r * K + k];
    center[k] = momentum * center[k] + (1.0 - momentum) * mean / static_cast<double>(R);
  }
}

double mean_entropy(const Tensor& probs, const std::vector<double>& row_weights) {
  const int64_t K = probs.shape().back();
  const int64_t R = probs.numel() / K;
  double total = 0.0, wsum = 0.0;
  for (int64_t r = 0; r < R; ++r) {
    const double w = row_weights.empty() ? 1.0 : row_weights[static_cast<size_t>(r)];
    if (w == 0.0) continue;
    double h = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      const double p = probs[r * K + k];
      if (p > 0) h -= p * std::log(p);
    }
    total += w * h;
    wsum += w;
  }
  return wsum > 0 ? total / wsum : 0.0;
}

double mcd_loss(const Tensor& student_probs, const Tensor& teacher_probs) {
  if (student_probs.shape() != teacher_probs.shape()) throw ShapeError("mcd_loss: shape mismatch");
  const int64_t K = teacher_probs.shape().back();
  const int64_t R = teacher_probs.numel() / K;
  // Termwise t (ln t - ln s) so identical rows give exactly zero.
  double kl = 0.0;
  for (int64_t r = 0; r < R; ++r)
    for (int64_t k = 0; k < K; ++k) {
      const double t = teacher_probs[r * K + k];
      if (t > 0) kl += t * (std::log(t) - std::log(student_probs[r * K + k]));
    }
  return std::max(0.0, kl / static_cast<double>(R));
}

ag::Var distill_kl(const ag::Var& student_logits, const Tensor& teacher_probs, double student_temp,
                   const std::vector<double>& row_weights) {
  auto ce = ag::soft_cross_entropy(student_logits, teacher_probs, student_temp, row_weights);
  return ag::add(ce, ag::constant(Tensor::scalar(-mean_entropy(teacher_probs, row_weights))));
}

ag::Var cls_distill_loss(const std::vector<ag::Var>& student_logits, const std::vector<Tensor>& teacher_probs,
                         double student_temp) {
  ag::Var total;
  int pairs = 0;
  for (size_t g = 0; g < teacher_probs.size(); ++g)
    for (size_t v = 0; v < student_logits.size(); ++v) {
      if (v == g) continue;
      auto term = distill_kl(student_logits[v], teacher_probs[g], student_temp);
      total = total ? ag::add(total, term) : term;
      ++pairs;
    }
  if (pairs == 0) return ag::constant(Tensor::scalar(0.0));
  return ag::scale(total, 1.0 / pairs);
}

ag::Var patch_distill_loss(const ag::Var& student_logits, const Tensor& teacher_probs, const std::vector<bool>& mask,
                           double student_temp) {
  const int64_t K = teacher_probs.shape().back();
  const int64_t R = teacher_probs.numel() / K;
  if (static_cast<int64_t>(mask.size()) != R) throw ShapeError("patch_distill_loss: mask size mismatch");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) return ag::constant(Tensor::scalar(0.0));
  std::vector<double> w(mask.begin(), mask.end());
  auto logits = ag::reshape(student_logits, {R, K});
  return distill_kl(logits, teacher_probs.reshaped({R, K}), student_temp, w);
}

ag::Var antibody_contrastive_loss(const ag::Var& embeddings, const std::vector<int>& group_ids, double temp) {
  if (group_ids.empty()) throw ShapeError("antibody_contrastive_loss: empty batch");
  if (std::all_of(group_ids.begin(), group_ids.end(), [&](int g) { return g == group_ids[0]; })) {
    spdlog::warn("antibody contrastive loss: batch holds a single group, no negatives; loss set to 0");
    return ag::constant(Tensor::scalar(0.0));
  }
  return ag::supervised_contrastive(ag::l2_normalize(embeddings), group_ids, temp);
}

void ema_update(ParamStore& teacher, const ParamStore& student, double m) {
  if (teacher.names() != student.names()) throw ShapeError("ema_update: parameter sets differ");
  for (size_t i = 0; i < teacher.size(); ++i) {
    auto& t = teacher.vars()[i]->value;
    const auto& s = student.vars()[i]->value;
    if (t.shape() != s.shape()) throw ShapeError("ema_update: shape mismatch for " + teacher.names()[i]);
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = m * t[j] + (1.0 - m) * s[j];
  }
}

double ema_momentum(int64_t step, int64_t total, double base) {
  if (total <= 0) return base;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 1.0 - (1.0 - base) * (std::cos(std::numbers::pi * progress) + 1.0) / 2.0;
}

}  // namespace c3r
