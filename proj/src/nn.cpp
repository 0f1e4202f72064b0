#include "c3r/nn.hpp"

#include <cmath>

namespace c3r {

ParamStore::ParamStore(const ParamStore& other) : names_(other.names_), index_(other.index_) {
  vars_.reserve(other.vars_.size());
  for (const auto& v : other.vars_) {
    auto n = std::make_shared<ag::Node>();
    n->value = v->value;
    n->requires_grad = v->requires_grad;
    vars_.push_back(std::move(n));
  }
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    ParamStore tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

ag::Var ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  auto v = trainable ? ag::parameter(std::move(value)) : ag::constant(std::move(value));
  index_[name] = vars_.size();
  names_.push_back(name);
  vars_.push_back(v);
  return v;
}

const ag::Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return vars_[it->second];
}

int64_t ParamStore::numel() const {
  int64_t n = 0;
  for (const auto& v : vars_) n += v->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& v : vars_) v->grad = Tensor();
}

void ParamStore::set_trainable(bool trainable) {
  for (auto& v : vars_) {
    v->requires_grad = trainable;
    if (!trainable) v->grad = Tensor();
  }
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.names_ != names_) throw Error("copy_values_from: parameter names differ");
  for (size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i]->value.shape() != other.vars_[i]->value.shape())
      throw ShapeError("copy_values_from: shape mismatch for " + names_[i]);
    vars_[i]->value = other.vars_[i]->value;
  }
}

Tensor trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> nd(0.0, std);
  for (auto& v : t.vec()) {
    double x;
    do {
      x = nd(rng);
    } while (std::abs(x) > 2.0 * std);
    v = x;
  }
  return t;
}

namespace nn {

void init_linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng, bool bias) {
  ps.add(prefix + ".weight", trunc_normal({out, in}, 0.02, rng));
  if (bias) ps.add(prefix + ".bias", Tensor::zeros({out}));
}

void init_layer_norm(ParamStore& ps, const std::string& prefix, int64_t dim) {
  ps.add(prefix + ".weight", Tensor({dim}, 1.0));
  ps.add(prefix + ".bias", Tensor::zeros({dim}));
}

int64_t mlp_hidden(int64_t dim, double mlp_ratio) { return static_cast<int64_t>(std::lround(static_cast<double>(dim) * mlp_ratio)); }

void init_block(ParamStore& ps, const std::string& prefix, int64_t dim, double mlp_ratio, Rng& rng) {
  const int64_t hidden = mlp_hidden(dim, mlp_ratio);
  init_layer_norm(ps, prefix + ".norm1", dim);
  init_linear(ps, prefix + ".attn.qkv", dim, 3 * dim, rng);
  init_linear(ps, prefix + ".attn.proj", dim, dim, rng);
  init_layer_norm(ps, prefix + ".norm2", dim);
  init_linear(ps, prefix + ".mlp.fc1", dim, hidden, rng);
  init_linear(ps, prefix + ".mlp.fc2", hidden, dim, rng);
}

ag::Var apply_linear(const ParamStore& ps, const std::string& prefix, const ag::Var& x) {
  const std::string bias_name = prefix + ".bias";
  return ag::linear(x, ps.get(prefix + ".weight"), ps.contains(bias_name) ? ps.get(bias_name) : nullptr);
}

ag::Var apply_layer_norm(const ParamStore& ps, const std::string& prefix, const ag::Var& x) {
  return ag::layer_norm(x, ps.get(prefix + ".weight"), ps.get(prefix + ".bias"), kLayerNormEps);
}

ag::Var apply_block(const ParamStore& ps, const std::string& prefix, const ag::Var& x, int heads) {
  auto h = apply_layer_norm(ps, prefix + ".norm1", x);
  h = apply_linear(ps, prefix + ".attn.qkv", h);
  h = ag::attention(h, heads);
  h = apply_linear(ps, prefix + ".attn.proj", h);
  auto y = ag::add(x, h);
  h = apply_layer_norm(ps, prefix + ".norm2", y);
  h = ag::gelu(apply_linear(ps, prefix + ".mlp.fc1", h));
  h = apply_linear(ps, prefix + ".mlp.fc2", h);
  return ag::add(y, h);
}

int64_t block_param_count(int64_t dim, double mlp_ratio) {
  const int64_t hidden = mlp_hidden(dim, mlp_ratio);
  const int64_t norms = 2 * (2 * dim);
  const int64_t attn = (3 * dim * dim + 3 * dim) + (dim * dim + dim);
  const int64_t mlp = (dim * hidden + hidden) + (hidden * dim + dim);
  return norms + attn + mlp;
}

}  // namespace nn
}  // namespace c3r
