#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "c3r/autograd.hpp"
#include "c3r/channel_schema.hpp"
#include "c3r/nn.hpp"

namespace c3r::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

/// Four-channel layout with three structural references and one target.
inline GroupSchema hpa_schema() {
  return parse_schema(
      "name=Microtubules role=context index=0\n"
      "name=Nucleus role=context index=1\n"
      "name=ER role=context index=2\n"
      "name=Protein role=concept index=3\n");
}

/// Relative error with a denominator floor for vanishing gradients.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradcheckReport {
  int checked = 0;
  double max_rel = 0.0;
};

/// Central finite differences against reverse mode on `samples` randomly
/// chosen scalar entries of `params` (all entries when samples <= 0).
inline GradcheckReport gradcheck(const std::vector<ag::Var>& params, const std::function<ag::Var()>& loss_fn, Rng& rng,
                                 int samples = 0, double h = 1e-5) {
  for (const auto& p : params) p->grad = Tensor();
  ag::backward(loss_fn());
  std::vector<std::pair<size_t, int64_t>> coords;
  for (size_t i = 0; i < params.size(); ++i)
    for (int64_t j = 0; j < params[i]->value.numel(); ++j) coords.emplace_back(i, j);
  if (samples > 0 && static_cast<size_t>(samples) < coords.size()) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<size_t>(samples));
  }
  GradcheckReport rep;
  ag::NoGradGuard guard;
  for (const auto& [i, j] : coords) {
    auto& x = params[i]->value[j];
    const double orig = x;
    x = orig + h;
    const double up = loss_fn()->value[0];
    x = orig - h;
    const double down = loss_fn()->value[0];
    x = orig;
    const double numeric = (up - down) / (2 * h);
    const double analytic = params[i]->has_grad() ? params[i]->grad[j] : 0.0;
    rep.max_rel = std::max(rep.max_rel, rel_error(analytic, numeric));
    ++rep.checked;
  }
  return rep;
}

}  // namespace c3r::testing
