#pragma once

// Tape-free reverse-mode differentiation over Tensor values. Each op records
// its inputs and a closure that pushes the output gradient back to them;
// backward() walks the graph in reverse topological order.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "c3r/tensor.hpp"

namespace c3r::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
  bool has_grad() const { return !grad.empty(); }
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

Var constant(Tensor t);
Var parameter(Tensor t);

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
/// node that requires them. `loss` must hold a single element.
void backward(const Var& loss);

// Elementwise and broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a viewed as [R, b.numel()] plus b broadcast over R.
Var add_tiled(const Var& a, const Var& b);
Var gelu(const Var& x);

// Dense layers. x is [..., in], weight [out, in], bias [out] or null.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Normalises over the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

/// Multi-head scaled dot-product self-attention. qkv is [S, T, 3D] laid out
/// as (q | k | v); returns [S, T, D].
Var attention(const Var& qkv, int heads);

// Shape manipulation.
Var reshape(const Var& x, Shape shape);
/// Mean over axis 1 of [B, C, ...].
Var mean_axis1(const Var& x);
/// Concatenation along the last axis; leading shapes must match.
Var concat_last(const Var& a, const Var& b);
/// [B, N, D] -> [B, N+1, D] with `token` ([D]) at position 0.
Var prepend_token(const Var& x, const Var& token);
/// Tokens [begin, end) of [B, T, D].
Var slice_tokens(const Var& x, int64_t begin, int64_t end);
/// x viewed as [R, d]; rows with mask[r] set are replaced by `token` ([d]).
Var replace_rows(const Var& x, const std::vector<bool>& mask, const Var& token);
/// Fixed (non-differentiable) matrix M [n, m] times p [m, d].
Var matmul_fixed(const Tensor& m, const Var& p);
/// Rows of x ([R, n]) scaled to unit L2 norm.
Var l2_normalize(const Var& x, double eps = 1e-12);

// Reductions and losses; all return scalars.
Var sum(const Var& x);
Var mean(const Var& x);
/// sum(x * w) for a fixed weight tensor of the same shape.
Var dot_fixed(const Var& x, const Tensor& w);
/// Weighted mean over rows of -sum_k target[r,k] * log_softmax(logits[r]/temp)[k].
/// Rows with zero weight are skipped; empty weight vector means all ones.
Var soft_cross_entropy(const Var& logits, const Tensor& target, double temp, const std::vector<double>& row_weights = {});
/// Supervised contrastive loss over rows of already-normalised embeddings.
Var supervised_contrastive(const Var& embeddings, std::span<const int> group_ids, double temp);
/// Mean sigmoid focal loss over the entries of logits [R, L] where label_mask[l] is set.
Var sigmoid_focal(const Var& logits, const Tensor& targets, double alpha, double gamma,
                  const std::vector<bool>& label_mask = {});

}  // namespace c3r::ag
