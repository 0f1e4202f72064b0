#pragma once

#include <initializer_list>
#include <vector>

#include "c3r/nn.hpp"

namespace c3r {

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;
};

/// Decoupled weight-decay Adam over a fixed parameter store. Parameters of
/// rank <= 1 (biases, norms, tokens) are not decayed.
class AdamW {
 public:
  AdamW(const ParamStore& params, AdamWConfig cfg);

  /// Applies one update using the gradients currently held by the store's
  /// parameters, then clears them. Parameters without a gradient are skipped.
  void step(ParamStore& params, double lr);
  int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::vector<bool> decay_;
  int64_t t_ = 0;
};

/// Linear warmup from 0 to `base` over `warmup` steps, then cosine decay to `final_value` at `total`.
double cosine_schedule(int64_t step, int64_t total, double base, double final_value, int64_t warmup = 0);

/// Linear ramp from `start` to `end` over `warmup` steps, constant afterwards.
double linear_warmup(int64_t step, int64_t warmup, double start, double end);

/// Scales gradients of all stores so their joint L2 norm is at most
/// `max_norm` (<= 0 disables clipping); returns the pre-clip norm.
double clip_grad_norm(std::initializer_list<ParamStore*> stores, double max_norm);

}  // namespace c3r
