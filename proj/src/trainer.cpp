#include "c3r/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "c3r/json_util.hpp"

namespace c3r {
namespace {

nlohmann::json crop_to_json(const CropConfig& c) {
  return {{"size", c.size}, {"scale_lo", c.scale_lo}, {"scale_hi", c.scale_hi}, {"flips", c.flips}};
}

CropConfig crop_from_json(const nlohmann::json& j, CropConfig c, const std::string& sec) {
  reject_unknown_keys(j, {"size", "scale_lo", "scale_hi", "flips"}, sec);
  read_opt(j, "size", c.size, sec);
  read_opt(j, "scale_lo", c.scale_lo, sec);
  read_opt(j, "scale_hi", c.scale_hi, sec);
  read_opt(j, "flips", c.flips, sec);
  return c;
}

/// Stacks n views [B, D] into [n*B, D] with rows ordered (sample, view).
ag::Var stack_rows(const std::vector<ag::Var>& parts) {
  auto joined = parts.front();
  for (size_t i = 1; i < parts.size(); ++i) joined = ag::concat_last(joined, parts[i]);
  const auto& s = parts.front()->value.shape();
  return ag::reshape(joined, {s[0] * static_cast<int64_t>(parts.size()), s[1]});
}

Tensor stack_values(const std::vector<Tensor>& parts) {
  int64_t rows = 0;
  const int64_t K = parts.front().shape().back();
  for (const auto& p : parts) rows += p.numel() / K;
  Tensor out({rows, K});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
  }
  return out;
}

}  // namespace

void TrainConfig::validate(const GroupSchema& schema, const EncoderConfig& enc) const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (batch_groups < 1 || per_group < 1) throw ConfigError("train: batch_groups and per_group must be >= 1");
  if (global_crops < 1) throw ConfigError("train.global_crops must be >= 1");
  if (local_crops < 0) throw ConfigError("train.local_crops must be >= 0");
  if (global_crops + local_crops < 2) throw ConfigError("train: need at least two views for distillation");
  for (const auto* c : {&global_crop, &local_crop})
    if (c->size % enc.patch_size != 0)
      throw ConfigError("train: crop size " + std::to_string(c->size) + " not divisible by patch size " +
                        std::to_string(enc.patch_size));
  if (patch_masking && !(mask_lo >= 0 && mask_lo <= mask_hi && mask_hi < 1))
    throw ConfigError("train: mask range must satisfy 0 <= mask_lo <= mask_hi < 1");
  drop.validate(schema.num_context());
  if (enc.arch == Architecture::Baseline && drop.mode != DropMode::None)
    throw ConfigError("train.drop requires the grouped (cce) architecture");
  head.validate();
  if (antibody_temp <= 0) throw ConfigError("train.antibody_temp must be positive");
  if (optim.lr <= 0 || min_lr < 0) throw ConfigError("train: learning rates must be positive");
  if (ema_base < 0 || ema_base > 1) throw ConfigError("train.ema_base must lie in [0, 1]");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_groups", c.batch_groups},
          {"per_group", c.per_group},
          {"global_crops", c.global_crops},
          {"local_crops", c.local_crops},
          {"global_crop", crop_to_json(c.global_crop)},
          {"local_crop", crop_to_json(c.local_crop)},
          {"patch_masking", c.patch_masking},
          {"mask_lo", c.mask_lo},
          {"mask_hi", c.mask_hi},
          {"drop", to_json(c.drop)},
          {"head", to_json(c.head)},
          {"antibody_loss", c.antibody_loss},
          {"antibody_temp", c.antibody_temp},
          {"lr", c.optim.lr},
          {"min_lr", c.min_lr},
          {"weight_decay", c.optim.weight_decay},
          {"warmup_steps", c.warmup_steps},
          {"clip_grad", c.clip_grad},
          {"ema_base", c.ema_base},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string sec = "train";
  reject_unknown_keys(j,
                      {"steps", "batch_groups", "per_group", "global_crops", "local_crops", "global_crop", "local_crop",
                       "patch_masking", "mask_lo", "mask_hi", "drop", "head", "antibody_loss", "antibody_temp", "lr",
                       "min_lr", "weight_decay", "warmup_steps", "clip_grad", "ema_base", "seed"},
                      sec);
  TrainConfig c;
  read_opt(j, "steps", c.steps, sec);
  read_opt(j, "batch_groups", c.batch_groups, sec);
  read_opt(j, "per_group", c.per_group, sec);
  read_opt(j, "global_crops", c.global_crops, sec);
  read_opt(j, "local_crops", c.local_crops, sec);
  if (j.contains("global_crop")) c.global_crop = crop_from_json(j["global_crop"], c.global_crop, sec + ".global_crop");
  if (j.contains("local_crop")) c.local_crop = crop_from_json(j["local_crop"], c.local_crop, sec + ".local_crop");
  read_opt(j, "patch_masking", c.patch_masking, sec);
  read_opt(j, "mask_lo", c.mask_lo, sec);
  read_opt(j, "mask_hi", c.mask_hi, sec);
  if (j.contains("drop")) c.drop = drop_policy_from_json(j["drop"]);
  if (j.contains("head")) c.head = head_config_from_json(j["head"]);
  read_opt(j, "antibody_loss", c.antibody_loss, sec);
  read_opt(j, "antibody_temp", c.antibody_temp, sec);
  read_opt(j, "lr", c.optim.lr, sec);
  read_opt(j, "min_lr", c.min_lr, sec);
  read_opt(j, "weight_decay", c.optim.weight_decay, sec);
  read_opt(j, "warmup_steps", c.warmup_steps, sec);
  read_opt(j, "clip_grad", c.clip_grad, sec);
  read_opt(j, "ema_base", c.ema_base, sec);
  read_opt(j, "seed", c.seed, sec);
  return c;
}

BatchSampler::BatchSampler(const Dataset& data, int groups, int per_group, uint64_t seed)
    : data_(&data), groups_(groups), per_group_(per_group), rng_(seed) {
  std::vector<int> ids;
  for (const auto& s : data.samples) ids.push_back(s.group_id);
  std::vector<int> uniq = ids;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  members_.resize(uniq.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    const auto g = std::lower_bound(uniq.begin(), uniq.end(), ids[i]) - uniq.begin();
    members_[static_cast<size_t>(g)].push_back(static_cast<int>(i));
  }
  if (members_.empty()) throw ConfigError("BatchSampler: empty dataset");
  groups_ = std::min<int>(groups_, static_cast<int>(members_.size()));
}

TrainBatch BatchSampler::next() {
  std::vector<int> order(members_.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < groups_; ++i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(std::uniform_int_distribution<int>(i, static_cast<int>(order.size()) - 1)(rng_))]);
  std::vector<int> picked;
  TrainBatch b;
  for (int i = 0; i < groups_; ++i) {
    auto pool = members_[static_cast<size_t>(order[static_cast<size_t>(i)])];
    std::shuffle(pool.begin(), pool.end(), rng_);
    for (int k = 0; k < per_group_; ++k) {
      const int idx = pool[static_cast<size_t>(k) % pool.size()];
      picked.push_back(idx);
      b.group_ids.push_back(data_->samples[static_cast<size_t>(idx)].group_id);
    }
  }
  b.images = data_->stack(picked);
  return b;
}

GroupedBatch ViewSet::student_view(const GroupedBatch& v) const {
  if (dropped_context.empty()) return v;
  return {remove_channels(v.context, dropped_context), v.content};
}

GroupedBatch ViewSet::teacher_view(const GroupedBatch& v) const { return teacher_dropped ? student_view(v) : v; }

ViewSet make_views(const TrainBatch& batch, const GroupSchema& schema, const TrainConfig& cfg, int64_t tokens_per_view,
                   Rng& rng) {
  ViewSet vs;
  for (int g = 0; g < cfg.global_crops; ++g) vs.global_views.push_back(split_groups(random_resized_crops(batch.images, cfg.global_crop, rng), schema));
  for (int l = 0; l < cfg.local_crops; ++l) vs.local_views.push_back(split_groups(random_resized_crops(batch.images, cfg.local_crop, rng), schema));
  const int64_t B = batch.images.dim(0);
  for (int g = 0; g < cfg.global_crops; ++g)
    vs.patch_masks.push_back(cfg.patch_masking ? sample_patch_mask(B, tokens_per_view, cfg.mask_lo, cfg.mask_hi, rng)
                                               : std::vector<bool>(static_cast<size_t>(B * tokens_per_view), false));
  const int c = sample_drop_count(cfg.drop, schema.num_context(), rng);
  vs.dropped_context = sample_dropped_positions(schema.num_context(), c, rng);
  vs.teacher_dropped = cfg.drop.drops_teacher();
  return vs;
}

DistillationState init_distillation(const Encoder& student, const HeadConfig& head, uint64_t seed) {
  head.validate();
  DistillationState st{student, student, ParamStore(), ParamStore(), Tensor({head.prototypes}),
                       Tensor({head.prototypes}), 0, 0.0};
  Rng rng(seed);
  init_projection_head(st.student_heads, "head.cls", student.config().embed_dim, head, rng);
  init_projection_head(st.student_heads, "head.patch", student.config().embed_dim, head, rng);
  st.teacher_heads = st.student_heads;
  st.teacher.params().set_trainable(false);
  st.teacher_heads.set_trainable(false);
  return st;
}

nlohmann::json StepMetrics::to_json() const {
  return {{"step", step},       {"loss", loss},       {"loss_cls", loss_cls},         {"loss_patch", loss_patch},
          {"loss_antibody", loss_antibody}, {"lr", lr}, {"ema_momentum", ema_momentum}, {"teacher_temp", teacher_temp},
          {"grad_norm", grad_norm}, {"dropped", dropped}};
}

Trainer::Trainer(const Encoder& init, TrainConfig cfg)
    : cfg_(std::move(cfg)),
      state_(init_distillation(init, cfg_.head, cfg_.seed ^ 0x68656164ULL)),
      enc_opt_(state_.student.params(), cfg_.optim),
      head_opt_(state_.student_heads, cfg_.optim),
      rng_(cfg_.seed) {
  cfg_.validate(init.schema(), init.config());
}

StepMetrics Trainer::train_step(const TrainBatch& batch) {
  const int64_t n = cfg_.global_crop.size / state_.student.config().patch_size;
  const ViewSet views = make_views(batch, state_.student.schema(), cfg_, n * n, rng_);
  return train_step(batch, views);
}

StepMetrics Trainer::train_step(const TrainBatch& batch, const ViewSet& views) {
  auto& st = state_;
  StepMetrics m;
  m.step = st.step;
  m.lr = cosine_schedule(st.step, cfg_.steps, cfg_.optim.lr, cfg_.min_lr, cfg_.warmup_steps);
  m.ema_momentum = ema_momentum(st.step, cfg_.steps, cfg_.ema_base);
  m.teacher_temp = cfg_.head.teacher_temp_at(st.step);
  m.dropped = static_cast<int>(views.dropped_context.size());
  const double tau_s = cfg_.head.student_temp;

  std::vector<Tensor> t_cls_logits, t_patch_logits, t_cls_probs, t_patch_probs;
  {
    ag::NoGradGuard guard;
    for (const auto& v : views.global_views) {
      const auto out = st.teacher.forward(views.teacher_view(v));
      t_cls_logits.push_back(head_logits(st.teacher_heads, "head.cls", out.cls)->value);
      t_patch_logits.push_back(head_logits(st.teacher_heads, "head.patch", out.patches)->value);
      t_cls_probs.push_back(softmax_rows(t_cls_logits.back(), m.teacher_temp, st.cls_center));
      t_patch_probs.push_back(softmax_rows(t_patch_logits.back(), m.teacher_temp, st.patch_center));
    }
  }

  std::vector<ag::Var> s_cls, s_global_emb;
  ag::Var patch_total;
  for (size_t g = 0; g < views.global_views.size(); ++g) {
    ForwardOptions opts;
    opts.patch_mask = &views.patch_masks[g];
    const auto out = st.student.forward(views.student_view(views.global_views[g]), opts);
    s_cls.push_back(head_logits(st.student_heads, "head.cls", out.cls));
    s_global_emb.push_back(out.cls);
    auto pl = patch_distill_loss(head_logits(st.student_heads, "head.patch", out.patches), t_patch_probs[g],
                                 views.patch_masks[g], tau_s);
    patch_total = patch_total ? ag::add(patch_total, pl) : pl;
  }
  for (const auto& v : views.local_views) s_cls.push_back(head_logits(st.student_heads, "head.cls", st.student.forward(views.student_view(v)).cls));

  auto loss_cls = cls_distill_loss(s_cls, t_cls_probs, tau_s);
  auto loss_patch = ag::scale(patch_total, 1.0 / static_cast<double>(views.global_views.size()));
  auto total = ag::add(loss_cls, loss_patch);
  ag::Var loss_ab;
  if (cfg_.antibody_loss) {
    std::vector<int> ids;
    for (int id : batch.group_ids)
      for (size_t g = 0; g < s_global_emb.size(); ++g) ids.push_back(id);
    loss_ab = antibody_contrastive_loss(stack_rows(s_global_emb), ids, cfg_.antibody_temp);
    total = ag::add(total, loss_ab);
  }
  m.loss_cls = loss_cls->value[0];
  m.loss_patch = loss_patch->value[0];
  m.loss_antibody = loss_ab ? loss_ab->value[0] : 0.0;
  m.loss = total->value[0];
  if (!std::isfinite(m.loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << st.step << ": cls=" << m.loss_cls << " patch=" << m.loss_patch
       << " antibody=" << m.loss_antibody << " lr=" << m.lr << " dropped=" << m.dropped;
    throw NumericError(os.str());
  }

  st.student.params().zero_grad();
  st.student_heads.zero_grad();
  ag::backward(total);
  for (const auto* ps : {&st.teacher.params(), &st.teacher_heads})
    for (size_t i = 0; i < ps->size(); ++i)
      if (ps->vars()[i]->has_grad()) throw Error("teacher parameter " + ps->names()[i] + " received a gradient");
  m.grad_norm = clip_grad_norm({&st.student.params(), &st.student_heads}, cfg_.clip_grad);
  if (!std::isfinite(m.grad_norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(st.step));
  enc_opt_.step(st.student.params(), m.lr);
  head_opt_.step(st.student_heads, m.lr);

  ema_update(st.teacher.params(), st.student.params(), m.ema_momentum);
  ema_update(st.teacher_heads, st.student_heads, m.ema_momentum);
  update_center(st.cls_center, stack_values(t_cls_logits), cfg_.head.center_momentum);
  update_center(st.patch_center, stack_values(t_patch_logits), cfg_.head.center_momentum);
  st.momentum = m.ema_momentum;
  ++st.step;
  return m;
}

Trainer train(const Dataset& data, const Encoder& init, const TrainConfig& cfg, const StepCallback& on_step) {
  Trainer trainer(init, cfg);
  BatchSampler sampler(data, cfg.batch_groups, cfg.per_group, cfg.seed + 1);
  for (int64_t s = 0; s < cfg.steps; ++s) {
    const auto m = trainer.train_step(sampler.next());
    if (on_step) on_step(m, trainer);
  }
  return trainer;
}

}  // namespace c3r
