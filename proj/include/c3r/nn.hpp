#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "c3r/autograd.hpp"

namespace c3r {

using Rng = std::mt19937_64;

/// Named, ordered parameter tensors. Copies are deep: a copied store owns
/// independent parameter nodes with the same values.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  ag::Var add(const std::string& name, Tensor value, bool trainable = true);
  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ag::Var>& vars() const { return vars_; }
  size_t size() const { return vars_.size(); }
  int64_t numel() const;

  void zero_grad();
  void set_trainable(bool trainable);
  /// Overwrites values from a store with identical names and shapes.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
  std::map<std::string, size_t> index_;
};

/// Samples N(0, std^2) truncated to [-2 std, 2 std].
Tensor trunc_normal(Shape shape, double std, Rng& rng);

namespace nn {

constexpr double kLayerNormEps = 1e-6;

void init_linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng, bool bias = true);
void init_layer_norm(ParamStore& ps, const std::string& prefix, int64_t dim);
void init_block(ParamStore& ps, const std::string& prefix, int64_t dim, double mlp_ratio, Rng& rng);

ag::Var apply_linear(const ParamStore& ps, const std::string& prefix, const ag::Var& x);
ag::Var apply_layer_norm(const ParamStore& ps, const std::string& prefix, const ag::Var& x);
/// Pre-norm transformer block on x [S, T, dim].
ag::Var apply_block(const ParamStore& ps, const std::string& prefix, const ag::Var& x, int heads);

int64_t mlp_hidden(int64_t dim, double mlp_ratio);
/// Closed-form parameter count of one pre-norm block.
int64_t block_param_count(int64_t dim, double mlp_ratio);

}  // namespace nn
}  // namespace c3r
