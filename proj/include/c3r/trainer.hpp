#pragma once

// Momentum self-distillation with masked context distillation. The student
// sees channel-dropped, patch-masked global views plus local views; the EMA
// teacher sees unmasked full-context global views only.

#include <functional>
#include <vector>

#include "c3r/augment.hpp"
#include "c3r/encoder.hpp"
#include "c3r/mcd.hpp"
#include "c3r/optim.hpp"
#include "c3r/synth.hpp"

namespace c3r {

struct TrainConfig {
  int64_t steps = 200;
  int batch_groups = 4;
  int per_group = 4;
  int global_crops = 2;
  int local_crops = 4;
  CropConfig global_crop{32, 0.5, 1.0};
  CropConfig local_crop{16, 0.15, 0.5};
  bool patch_masking = true;
  double mask_lo = 0.1;
  double mask_hi = 0.5;
  DropPolicy drop;
  HeadConfig head;
  bool antibody_loss = true;
  double antibody_temp = 0.1;
  AdamWConfig optim;
  double min_lr = 1e-6;
  int64_t warmup_steps = 10;
  double clip_grad = 3.0;
  double ema_base = 0.99;
  uint64_t seed = 0;

  void validate(const GroupSchema& schema, const EncoderConfig& enc) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainBatch {
  Tensor images;  ///< [B, C, h, w] in source-index order
  std::vector<int> group_ids;
};

/// Draws `groups` distinct groups and `per_group` samples from each.
class BatchSampler {
 public:
  BatchSampler(const Dataset& data, int groups, int per_group, uint64_t seed);
  TrainBatch next();

 private:
  const Dataset* data_;
  int groups_, per_group_;
  std::vector<std::vector<int>> members_;
  Rng rng_;
};

struct ViewSet {
  std::vector<GroupedBatch> global_views;  ///< full context, for the teacher
  std::vector<GroupedBatch> local_views;
  std::vector<std::vector<bool>> patch_masks;  ///< per student global view, size B*N
  std::vector<int> dropped_context;            ///< positions within the context group
  bool teacher_dropped = false;

  /// Student input of a view: context channels dropped.
  GroupedBatch student_view(const GroupedBatch& v) const;
  GroupedBatch teacher_view(const GroupedBatch& v) const;
};

ViewSet make_views(const TrainBatch& batch, const GroupSchema& schema, const TrainConfig& cfg, int64_t tokens_per_view,
                   Rng& rng);

struct DistillationState {
  Encoder student;
  Encoder teacher;
  ParamStore student_heads;  ///< "head.cls.*" and "head.patch.*"
  ParamStore teacher_heads;
  Tensor cls_center;
  Tensor patch_center;
  int64_t step = 0;
  double momentum = 0.0;
};

/// Teacher and heads start as exact copies of the student's.
DistillationState init_distillation(const Encoder& student, const HeadConfig& head, uint64_t seed);

struct StepMetrics {
  int64_t step = 0;
  double loss = 0, loss_cls = 0, loss_patch = 0, loss_antibody = 0;
  double lr = 0, ema_momentum = 0, teacher_temp = 0, grad_norm = 0;
  int dropped = 0;

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  Trainer(const Encoder& init, TrainConfig cfg);

  /// One optimisation step; throws NumericError (state untouched) on a non-finite loss.
  StepMetrics train_step(const TrainBatch& batch);
  /// Same, with caller-provided views.
  StepMetrics train_step(const TrainBatch& batch, const ViewSet& views);

  const DistillationState& state() const { return state_; }
  DistillationState& state() { return state_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  DistillationState state_;
  AdamW enc_opt_, head_opt_;
  Rng rng_;
};

using StepCallback = std::function<void(const StepMetrics&, const Trainer&)>;

/// Runs cfg.steps steps on batches drawn from `data`; returns the trainer.
Trainer train(const Dataset& data, const Encoder& init, const TrainConfig& cfg, const StepCallback& on_step = {});

}  // namespace c3r
