#include "c3r/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

namespace c3r::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

bool any_requires_grad(const std::vector<Var>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v && v->requires_grad; });
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled && any_requires_grad(inputs)) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.shape() != b->value.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
}

int64_t last_dim(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("expected rank >= 1");
  return t.shape().back();
}

void accumulate(const Var& v, const Tensor& g) {
  if (!v->requires_grad) return;
  auto& buf = v->grad_buffer();
  for (int64_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor::zeros(value.shape());
  if (grad.shape() != value.shape()) grad = Tensor::zeros(value.shape());
  return grad;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

void backward(const Var& loss) {
  if (loss->value.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss->value.shape()));
  if (!loss->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && child->backward_fn && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Intermediate gradients are not needed after the sweep.
  for (Node* n : order)
    if (n->backward_fn) n->grad = Tensor();
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad);
    accumulate(b, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad);
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * a->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v *= s;
  return make_node(std::move(out), {a}, [a, s](Node& self) {
    auto& g = a->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_tiled(const Var& a, const Var& b) {
  const int64_t n = b->value.numel();
  if (n == 0 || a->value.numel() % n != 0)
    throw ShapeError("add_tiled: " + shape_str(b->value.shape()) + " does not tile " + shape_str(a->value.shape()));
  const int64_t rows = a->value.numel() / n;
  Tensor out = a->value;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < n; ++j) out[r * n + j] += b->value[j];
  return make_node(std::move(out), {a, b}, [a, b, rows, n](Node& self) {
    accumulate(a, self.grad);
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.vec()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_node(std::move(out), {x}, [x](Node& self) {
    auto& g = x->grad_buffer();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double v = x->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const auto& W = weight->value;
  if (W.rank() != 2) throw ShapeError("linear: weight must be 2-D");
  const int64_t out_f = W.dim(0), in_f = W.dim(1);
  if (last_dim(x->value) != in_f)
    throw ShapeError("linear: input " + shape_str(x->value.shape()) + " vs weight " + shape_str(W.shape()));
  if (bias && bias->value.numel() != out_f) throw ShapeError("linear: bias size mismatch");
  const int64_t rows = x->value.numel() / in_f;
  Shape out_shape = x->value.shape();
  out_shape.back() = out_f;
  Tensor out(out_shape);
  {
    CMapMat X(x->value.data(), rows, in_f);
    CMapMat Wm(W.data(), out_f, in_f);
    MapMat Y(out.data(), rows, out_f);
    Y.noalias() = X * Wm.transpose();
    if (bias) {
      Eigen::Map<const Eigen::RowVectorXd> bv(bias->value.data(), out_f);
      Y.rowwise() += bv;
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_node(std::move(out), std::move(inputs), [x, weight, bias, rows, in_f, out_f](Node& self) {
    CMapMat dY(self.grad.data(), rows, out_f);
    if (x->requires_grad) {
      MapMat dX(x->grad_buffer().data(), rows, in_f);
      dX.noalias() += dY * CMapMat(weight->value.data(), out_f, in_f);
    }
    if (weight->requires_grad) {
      MapMat dW(weight->grad_buffer().data(), out_f, in_f);
      dW.noalias() += dY.transpose() * CMapMat(x->value.data(), rows, in_f);
    }
    if (bias && bias->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> db(bias->grad_buffer().data(), out_f);
      db += dY.colwise().sum();
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int64_t n = last_dim(x->value);
  if (gamma->value.numel() != n || beta->value.numel() != n) throw ShapeError("layer_norm: affine size mismatch");
  const int64_t rows = x->value.numel() / n;
  Tensor out(x->value.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x->value.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x->value.data() + r * n;
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[static_cast<size_t>(r * n + j)] = h;
      out[r * n + j] = h * gamma->value[j] + beta->value[j];
    }
  }
  return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, rows, n](Node& self) {
    const auto& dy = self.grad;
    if (gamma->requires_grad || beta->requires_grad) {
      auto& dg = gamma->grad_buffer();
      auto& db = beta->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < n; ++j) {
          dg[j] += dy[r * n + j] * (*xhat)[static_cast<size_t>(r * n + j)];
          db[j] += dy[r * n + j];
        }
    }
    if (x->requires_grad) {
      auto& dx = x->grad_buffer();
      std::vector<double> dxhat(static_cast<size_t>(n));
      for (int64_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          const double d = dy[r * n + j] * gamma->value[j];
          dxhat[static_cast<size_t>(j)] = d;
          m1 += d;
          m2 += d * (*xhat)[static_cast<size_t>(r * n + j)];
        }
        m1 /= static_cast<double>(n);
        m2 /= static_cast<double>(n);
        const double is = (*inv_std)[static_cast<size_t>(r)];
        for (int64_t j = 0; j < n; ++j)
          dx[r * n + j] += is * (dxhat[static_cast<size_t>(j)] - m1 - (*xhat)[static_cast<size_t>(r * n + j)] * m2);
      }
    }
  });
}

Var attention(const Var& qkv, int heads) {
  const auto& v = qkv->value;
  if (v.rank() != 3 || v.dim(2) % 3 != 0) throw ShapeError("attention: expected [S, T, 3D], got " + shape_str(v.shape()));
  const int64_t S = v.dim(0), T = v.dim(1), D = v.dim(2) / 3;
  if (heads <= 0 || D % heads != 0) throw ShapeError("attention: width " + std::to_string(D) + " not divisible by heads");
  const int64_t dh = D / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({S, T, D});
  // Softmax probabilities kept for the backward pass: [S, heads, T, T].
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(S * heads * T * T));
  for (int64_t s = 0; s < S; ++s) {
    const double* base = v.data() + s * T * 3 * D;
    for (int h = 0; h < heads; ++h) {
      CStrideMap Q(base + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
      CStrideMap K(base + D + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
      CStrideMap V(base + 2 * D + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
      MapMat P(probs->data() + (s * heads + h) * T * T, T, T);
      P.noalias() = (Q * K.transpose()) * sc;
      for (int64_t i = 0; i < T; ++i) {
        const double m = P.row(i).maxCoeff();
        P.row(i) = (P.row(i).array() - m).exp();
        P.row(i) /= P.row(i).sum();
      }
      StrideMap O(out.data() + s * T * D + h * dh, T, dh, Eigen::OuterStride<>(D));
      O.noalias() = P * V;
    }
  }
  return make_node(std::move(out), {qkv}, [qkv, probs, S, T, D, heads, dh, sc](Node& self) {
    auto& g = qkv->grad_buffer();
    const auto& v = qkv->value;
    RowMat dP(T, T), dS(T, T);
    for (int64_t s = 0; s < S; ++s) {
      const double* base = v.data() + s * T * 3 * D;
      double* gbase = g.data() + s * T * 3 * D;
      for (int h = 0; h < heads; ++h) {
        CStrideMap Q(base + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
        CStrideMap K(base + D + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
        CStrideMap V(base + 2 * D + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
        StrideMap dQ(gbase + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
        StrideMap dK(gbase + D + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
        StrideMap dV(gbase + 2 * D + h * dh, T, dh, Eigen::OuterStride<>(3 * D));
        CMapMat P(probs->data() + (s * heads + h) * T * T, T, T);
        CStrideMap dO(self.grad.data() + s * T * D + h * dh, T, dh, Eigen::OuterStride<>(D));
        dV.noalias() += P.transpose() * dO;
        dP.noalias() = dO * V.transpose();
        for (int64_t i = 0; i < T; ++i) {
          const double dot = dP.row(i).dot(P.row(i));
          dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
        }
        dQ.noalias() += (dS * K) * sc;
        dK.noalias() += (dS.transpose() * Q) * sc;
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_node(std::move(out), {x}, [x](Node& self) { accumulate(x, self.grad); });
}

Var mean_axis1(const Var& x) {
  const auto& v = x->value;
  if (v.rank() < 2) throw ShapeError("mean_axis1: rank must be >= 2");
  const int64_t B = v.dim(0), C = v.dim(1);
  if (C == 0) throw ShapeError("mean_axis1: empty channel axis");
  const int64_t inner = v.numel() / (B * C);
  Shape out_shape{B};
  out_shape.insert(out_shape.end(), v.shape().begin() + 2, v.shape().end());
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(C);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < inner; ++i) out[b * inner + i] += v[(b * C + c) * inner + i] * inv;
  return make_node(std::move(out), {x}, [x, B, C, inner, inv](Node& self) {
    auto& g = x->grad_buffer();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < inner; ++i) g[(b * C + c) * inner + i] += self.grad[b * inner + i] * inv;
  });
}

Var concat_last(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != sb.size() || sa.empty() || !std::equal(sa.begin(), sa.end() - 1, sb.begin()))
    throw ShapeError("concat_last: " + shape_str(sa) + " vs " + shape_str(sb));
  const int64_t na = sa.back(), nb = sb.back();
  const int64_t rows = na == 0 ? 0 : a->value.numel() / na;
  Shape out_shape = sa;
  out_shape.back() = na + nb;
  Tensor out(out_shape);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(a->value.data() + r * na, na, out.data() + r * (na + nb));
    std::copy_n(b->value.data() + r * nb, nb, out.data() + r * (na + nb) + na);
  }
  return make_node(std::move(out), {a, b}, [a, b, rows, na, nb](Node& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < na; ++j) g[r * na + j] += self.grad[r * (na + nb) + j];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < nb; ++j) g[r * nb + j] += self.grad[r * (na + nb) + na + j];
    }
  });
}

Var prepend_token(const Var& x, const Var& token) {
  const auto& v = x->value;
  if (v.rank() != 3 || token->value.numel() != v.dim(2))
    throw ShapeError("prepend_token: " + shape_str(v.shape()) + " with token " + shape_str(token->value.shape()));
  const int64_t B = v.dim(0), N = v.dim(1), D = v.dim(2);
  Tensor out({B, N + 1, D});
  for (int64_t b = 0; b < B; ++b) {
    std::copy_n(token->value.data(), D, out.data() + b * (N + 1) * D);
    std::copy_n(v.data() + b * N * D, N * D, out.data() + b * (N + 1) * D + D);
  }
  return make_node(std::move(out), {x, token}, [x, token, B, N, D](Node& self) {
    if (x->requires_grad) {
      auto& g = x->grad_buffer();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < N * D; ++i) g[b * N * D + i] += self.grad[b * (N + 1) * D + D + i];
    }
    if (token->requires_grad) {
      auto& g = token->grad_buffer();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < D; ++j) g[j] += self.grad[b * (N + 1) * D + j];
    }
  });
}

Var slice_tokens(const Var& x, int64_t begin, int64_t end) {
  const auto& v = x->value;
  if (v.rank() != 3 || begin < 0 || end > v.dim(1) || begin >= end)
    throw ShapeError("slice_tokens: bad range for " + shape_str(v.shape()));
  const int64_t B = v.dim(0), T = v.dim(1), D = v.dim(2), L = end - begin;
  Tensor out({B, L, D});
  for (int64_t b = 0; b < B; ++b) std::copy_n(v.data() + (b * T + begin) * D, L * D, out.data() + b * L * D);
  return make_node(std::move(out), {x}, [x, B, T, D, L, begin](Node& self) {
    auto& g = x->grad_buffer();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < L * D; ++i) g[(b * T + begin) * D + i] += self.grad[b * L * D + i];
  });
}

Var replace_rows(const Var& x, const std::vector<bool>& mask, const Var& token) {
  const int64_t d = token->value.numel();
  if (d == 0 || x->value.numel() % d != 0 || static_cast<int64_t>(mask.size()) != x->value.numel() / d)
    throw ShapeError("replace_rows: mask/token do not match " + shape_str(x->value.shape()));
  const int64_t rows = static_cast<int64_t>(mask.size());
  Tensor out = x->value;
  for (int64_t r = 0; r < rows; ++r)
    if (mask[static_cast<size_t>(r)]) std::copy_n(token->value.data(), d, out.data() + r * d);
  return make_node(std::move(out), {x, token}, [x, token, mask, rows, d](Node& self) {
    if (x->requires_grad) {
      auto& g = x->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        if (!mask[static_cast<size_t>(r)])
          for (int64_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r * d + j];
    }
    if (token->requires_grad) {
      auto& g = token->grad_buffer();
      for (int64_t r = 0; r < rows; ++r)
        if (mask[static_cast<size_t>(r)])
          for (int64_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

Var matmul_fixed(const Tensor& m, const Var& p) {
  if (m.rank() != 2 || p->value.rank() != 2 || m.dim(1) != p->value.dim(0))
    throw ShapeError("matmul_fixed: " + shape_str(m.shape()) + " x " + shape_str(p->value.shape()));
  const int64_t n = m.dim(0), k = m.dim(1), d = p->value.dim(1);
  Tensor out({n, d});
  MapMat(out.data(), n, d).noalias() = CMapMat(m.data(), n, k) * CMapMat(p->value.data(), k, d);
  return make_node(std::move(out), {p}, [m, p, n, k, d](Node& self) {
    MapMat(p->grad_buffer().data(), k, d).noalias() +=
        CMapMat(m.data(), n, k).transpose() * CMapMat(self.grad.data(), n, d);
  });
}

Var l2_normalize(const Var& x, double eps) {
  const int64_t n = last_dim(x->value);
  const int64_t rows = x->value.numel() / n;
  Tensor out = x->value;
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += out[r * n + j] * out[r * n + j];
    const double nr = std::max(std::sqrt(s), eps);
    (*norms)[static_cast<size_t>(r)] = nr;
    for (int64_t j = 0; j < n; ++j) out[r * n + j] /= nr;
  }
  Tensor y = out;
  return make_node(std::move(out), {x}, [x, y, norms, rows, n](Node& self) {
    auto& g = x->grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += self.grad[r * n + j] * y[r * n + j];
      const double nr = (*norms)[static_cast<size_t>(r)];
      for (int64_t j = 0; j < n; ++j) g[r * n + j] += (self.grad[r * n + j] - y[r * n + j] * dot) / nr;
    }
  });
}

Var sum(const Var& x) {
  return make_node(Tensor::scalar(x->value.sum()), {x}, [x](Node& self) {
    auto& g = x->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& x) {
  if (x->value.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x->value.numel()));
}

Var dot_fixed(const Var& x, const Tensor& w) {
  if (x->value.shape() != w.shape()) throw ShapeError("dot_fixed: shape mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < w.numel(); ++i) s += x->value[i] * w[i];
  return make_node(Tensor::scalar(s), {x}, [x, w](Node& self) {
    auto& g = x->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0] * w[i];
  });
}

Var soft_cross_entropy(const Var& logits, const Tensor& target, double temp, const std::vector<double>& row_weights) {
  if (logits->value.shape() != target.shape()) throw ShapeError("soft_cross_entropy: logits/target shape mismatch");
  if (temp <= 0) throw ConfigError("soft_cross_entropy: temperature must be positive");
  const int64_t K = last_dim(target);
  const int64_t R = target.numel() / K;
  if (!row_weights.empty() && static_cast<int64_t>(row_weights.size()) != R)
    throw ShapeError("soft_cross_entropy: row weight count mismatch");
  auto weight = [&row_weights](int64_t r) { return row_weights.empty() ? 1.0 : row_weights[static_cast<size_t>(r)]; };
  double wsum = 0.0;
  for (int64_t r = 0; r < R; ++r) wsum += weight(r);
  if (wsum <= 0.0) return constant(Tensor::scalar(0.0));

  auto probs = std::make_shared<Tensor>(target.shape());
  double loss = 0.0;
  for (int64_t r = 0; r < R; ++r) {
    const double* z = logits->value.data() + r * K;
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < K; ++k) m = std::max(m, z[k] / temp);
    double se = 0.0;
    for (int64_t k = 0; k < K; ++k) se += std::exp(z[k] / temp - m);
    const double lse = m + std::log(se);
    const double w = weight(r);
    for (int64_t k = 0; k < K; ++k) {
      const double logp = z[k] / temp - lse;
      (*probs)[r * K + k] = std::exp(logp);
      if (w != 0.0) loss -= w * target[r * K + k] * logp;
    }
  }
  loss /= wsum;
  return make_node(Tensor::scalar(loss), {logits},
                   [logits, target, probs, temp, R, K, wsum, row_weights](Node& self) {
                     auto& g = logits->grad_buffer();
                     const double up = self.grad[0];
                     for (int64_t r = 0; r < R; ++r) {
                       const double w = row_weights.empty() ? 1.0 : row_weights[static_cast<size_t>(r)];
                       if (w == 0.0) continue;
                       double tsum = 0.0;
                       for (int64_t k = 0; k < K; ++k) tsum += target[r * K + k];
                       const double c = up * w / (wsum * temp);
                       for (int64_t k = 0; k < K; ++k)
                         g[r * K + k] += c * ((*probs)[r * K + k] * tsum - target[r * K + k]);
                     }
                   });
}

Var supervised_contrastive(const Var& embeddings, std::span<const int> group_ids, double temp) {
  const auto& X = embeddings->value;
  if (X.rank() != 2 || X.dim(0) != static_cast<int64_t>(group_ids.size()))
    throw ShapeError("supervised_contrastive: embeddings " + shape_str(X.shape()) + " vs " +
                     std::to_string(group_ids.size()) + " ids");
  if (temp <= 0) throw ConfigError("supervised_contrastive: temperature must be positive");
  const int64_t M = X.dim(0), Dm = X.dim(1);
  RowMat sim = CMapMat(X.data(), M, Dm) * CMapMat(X.data(), M, Dm).transpose() / temp;

  // G holds dL/dsim for the backward pass.
  auto G = std::make_shared<RowMat>(RowMat::Zero(M, M));
  int anchors = 0;
  double loss = 0.0;
  for (int64_t i = 0; i < M; ++i) {
    int npos = 0;
    for (int64_t j = 0; j < M; ++j)
      if (j != i && group_ids[static_cast<size_t>(j)] == group_ids[static_cast<size_t>(i)]) ++npos;
    if (npos > 0) ++anchors;
  }
  bool has_negative = false;
  for (int64_t j = 1; j < M && !has_negative; ++j) has_negative = group_ids[static_cast<size_t>(j)] != group_ids[0];
  if (anchors == 0 || !has_negative) return constant(Tensor::scalar(0.0));

  for (int64_t i = 0; i < M; ++i) {
    const int gi = group_ids[static_cast<size_t>(i)];
    int npos = 0;
    for (int64_t j = 0; j < M; ++j)
      if (j != i && group_ids[static_cast<size_t>(j)] == gi) ++npos;
    if (npos == 0) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < M; ++j)
      if (j != i) m = std::max(m, sim(i, j));
    double se = 0.0;
    for (int64_t j = 0; j < M; ++j)
      if (j != i) se += std::exp(sim(i, j) - m);
    const double lse = m + std::log(se);
    double li = 0.0;
    for (int64_t j = 0; j < M; ++j) {
      if (j == i) continue;
      const double p = std::exp(sim(i, j) - lse);
      const bool pos = group_ids[static_cast<size_t>(j)] == gi;
      if (pos) li -= (sim(i, j) - lse);
      (*G)(i, j) = (p - (pos ? 1.0 / npos : 0.0)) / anchors;
    }
    loss += li / npos;
  }
  loss /= anchors;
  return make_node(Tensor::scalar(loss), {embeddings}, [embeddings, G, M, Dm, temp](Node& self) {
    MapMat dX(embeddings->grad_buffer().data(), M, Dm);
    RowMat Gs = (*G + G->transpose()) * (self.grad[0] / temp);
    dX.noalias() += Gs * CMapMat(embeddings->value.data(), M, Dm);
  });
}

Var sigmoid_focal(const Var& logits, const Tensor& targets, double alpha, double gamma,
                  const std::vector<bool>& label_mask) {
  if (logits->value.shape() != targets.shape()) throw ShapeError("sigmoid_focal: shape mismatch");
  const int64_t L = last_dim(targets);
  const int64_t R = targets.numel() / L;
  if (!label_mask.empty() && static_cast<int64_t>(label_mask.size()) != L)
    throw ShapeError("sigmoid_focal: label mask size mismatch");
  auto active = [&label_mask](int64_t l) { return label_mask.empty() || label_mask[static_cast<size_t>(l)]; };
  int64_t count = 0;
  for (int64_t l = 0; l < L; ++l)
    if (active(l)) count += R;
  if (count == 0) return constant(Tensor::scalar(0.0));

  auto log_sigmoid = [](double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); };
  double loss = 0.0;
  auto grads = std::make_shared<Tensor>(targets.shape());
  for (int64_t r = 0; r < R; ++r)
    for (int64_t l = 0; l < L; ++l) {
      if (!active(l)) continue;
      const int64_t i = r * L + l;
      const double z = logits->value[i];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double lp = log_sigmoid(z), lq = log_sigmoid(-z);
      if (targets[i] > 0.5) {
        loss += -alpha * std::pow(1.0 - p, gamma) * lp;
        (*grads)[i] = alpha * std::pow(1.0 - p, gamma) * (gamma * p * lp - (1.0 - p));
      } else {
        loss += -(1.0 - alpha) * std::pow(p, gamma) * lq;
        (*grads)[i] = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * lq);
      }
    }
  const double inv = 1.0 / static_cast<double>(count);
  return make_node(Tensor::scalar(loss * inv), {logits}, [logits, grads, inv](Node& self) {
    auto& g = logits->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0] * inv * (*grads)[i];
  });
}

}  // namespace c3r::ag
