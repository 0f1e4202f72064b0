#include "c3r/optim.hpp"

#include <cmath>
#include <numbers>

namespace c3r {

AdamW::AdamW(const ParamStore& params, AdamWConfig cfg) : cfg_(cfg) {
  for (const auto& v : params.vars()) {
    m_.emplace_back(v->value.shape());
    v_.emplace_back(v->value.shape());
    decay_.push_back(v->value.rank() > 1);
  }
}

void AdamW::step(ParamStore& params, double lr) {
  if (params.size() != m_.size()) throw ShapeError("AdamW: parameter store changed size");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& node = *params.vars()[i];
    if (!node.requires_grad || !node.has_grad()) continue;
    double* w = node.value.data();
    const double* g = node.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double wd = decay_[i] ? cfg_.weight_decay : 0.0;
    for (int64_t j = 0; j < node.value.numel(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      w[j] -= lr * (update + wd * w[j]);
    }
    node.grad = Tensor();
  }
}

double cosine_schedule(int64_t step, int64_t total, double base, double final_value, int64_t warmup) {
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const int64_t span = total - warmup;
  if (span <= 0) return final_value;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return final_value + 0.5 * (base - final_value) * (1.0 + std::cos(std::numbers::pi * progress));
}

double linear_warmup(int64_t step, int64_t warmup, double start, double end) {
  if (warmup <= 0 || step >= warmup) return end;
  return start + (end - start) * static_cast<double>(step) / static_cast<double>(warmup);
}

double clip_grad_norm(std::initializer_list<ParamStore*> stores, double max_norm) {
  double sq = 0.0;
  for (const auto* ps : stores)
    for (const auto& v : ps->vars())
      if (v->has_grad())
        for (double g : v->grad.span()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto* ps : stores)
      for (const auto& v : ps->vars())
        if (v->has_grad())
          for (double& g : v->grad.span()) g *= s;
  }
  return norm;
}

}  // namespace c3r
