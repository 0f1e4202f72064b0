#pragma once

// Masked context distillation primitives: channel dropping, patch masking,
// projection heads with centering, KL distillation losses, the antibody
// supervised-contrastive auxiliary and the EMA teacher update.

#include <string>
#include <vector>

#include "c3r/nn.hpp"
#include "json.hpp"

namespace c3r {

enum class DropMode { None, FixedStudent, UniformStudent, StudentAndTeacher };

struct DropPolicy {
  DropMode mode = DropMode::None;
  /// Fixed count, or the maximum count for UniformStudent.
  int c = 0;

  /// Throws ConfigError unless 0 <= c < num_context.
  void validate(int num_context) const;
  bool drops_teacher() const { return mode == DropMode::StudentAndTeacher; }
};

nlohmann::json to_json(const DropPolicy& p);
DropPolicy drop_policy_from_json(const nlohmann::json& j);

int sample_drop_count(const DropPolicy& policy, int num_context, Rng& rng);

/// `c` distinct positions out of 0..num_context-1, ascending.
std::vector<int> sample_dropped_positions(int num_context, int c, Rng& rng);

struct DropResult {
  Tensor kept;               ///< [B, C1 - c, h, w]
  std::vector<int> dropped;  ///< positions within the context group, ascending
};

/// Removes the same random subset of `c` context channels from every sample.
DropResult drop_channels(const Tensor& x_context, int c, Rng& rng);
/// Removes the given positions.
Tensor remove_channels(const Tensor& x_context, const std::vector<int>& dropped);

/// floor(num_tokens * ratio).
int64_t masked_count(int64_t num_tokens, double ratio);

/// Per-sample masks of size B*N; each sample draws its ratio from U[lo, hi].
std::vector<bool> sample_patch_mask(int64_t batch, int64_t num_tokens, double lo, double hi, Rng& rng);

struct MaskedTokens {
  ag::Var tokens;
  std::vector<bool> mask;  ///< B*N, shared by every channel of a sample
};

/// Masks tokens [B, N, d] or [B, C, N, d] with the learned `mask_token` [d].
MaskedTokens patch_mask(const ag::Var& tokens, const ag::Var& mask_token, double lo, double hi, Rng& rng);

struct HeadConfig {
  int hidden_dim = 128;
  int bottleneck_dim = 64;
  int prototypes = 256;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double teacher_temp_final = 0.07;
  int teacher_temp_warmup = 0;
  double center_momentum = 0.9;

  void validate() const;
  /// Teacher temperature at a training step.
  double teacher_temp_at(int64_t step) const;
};

nlohmann::json to_json(const HeadConfig& c);
HeadConfig head_config_from_json(const nlohmann::json& j);

/// MLP -> L2-normalised bottleneck -> cosine logits against unit-norm prototypes.
void init_projection_head(ParamStore& ps, const std::string& prefix, int in_dim, const HeadConfig& cfg, Rng& rng);
ag::Var head_logits(const ParamStore& ps, const std::string& prefix, const ag::Var& features);

/// Row softmax of (logits - center) / temp; `center` may be empty.
Tensor softmax_rows(const Tensor& logits, double temp, const Tensor& center = Tensor());

/// Probability vectors of a head. The teacher path subtracts `center` and
/// never records gradients.
Tensor project(const ParamStore& ps, const std::string& prefix, const Tensor& features, bool is_teacher, double temp,
               const Tensor& center = Tensor());

/// center <- m * center + (1 - m) * mean over rows of teacher logits.
void update_center(Tensor& center, const Tensor& teacher_logits, double momentum);

/// Mean over rows of KL(teacher || student), clamped at zero against rounding.
double mcd_loss(const Tensor& student_probs, const Tensor& teacher_probs);

/// Mean over rows of the teacher entropy -sum p ln p.
double mean_entropy(const Tensor& probs, const std::vector<double>& row_weights = {});

/// Differentiable KL(teacher || softmax(student_logits / temp)), mean over weighted rows.
ag::Var distill_kl(const ag::Var& student_logits, const Tensor& teacher_probs, double student_temp,
                   const std::vector<double>& row_weights = {});

/// cls distillation over view pairs: every student view against every
/// teacher global view, skipping student view g against teacher view g for
/// the first `teacher_probs.size()` (global) student views.
ag::Var cls_distill_loss(const std::vector<ag::Var>& student_logits, const std::vector<Tensor>& teacher_probs,
                         double student_temp);

/// Mean KL over masked positions; 0 when nothing is masked.
ag::Var patch_distill_loss(const ag::Var& student_logits, const Tensor& teacher_probs, const std::vector<bool>& mask,
                           double student_temp);

/// Supervised contrastive loss on L2-normalised embeddings with same-group
/// positives. A single-group batch yields 0 and logs a warning.
ag::Var antibody_contrastive_loss(const ag::Var& embeddings, const std::vector<int>& group_ids, double temp);

/// teacher <- m * teacher + (1 - m) * student, for every parameter.
void ema_update(ParamStore& teacher, const ParamStore& student, double momentum);

/// Cosine ramp of the EMA momentum from `base` at step 0 to 1 at `total`.
double ema_momentum(int64_t step, int64_t total, double base);

}  // namespace c3r
