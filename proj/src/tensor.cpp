#include "c3r/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace c3r {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeError("data size " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

int64_t Tensor::offset(std::initializer_list<int64_t> idx) const {
  if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
  int64_t off = 0;
  size_t k = 0;
  for (auto i : idx) {
    if (i < 0 || i >= shape_[k]) throw ShapeError("index out of range for shape " + shape_str(shape_));
    off = off * shape_[k] + i;
    ++k;
  }
  return off;
}

double& Tensor::at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(offset(idx))]; }
double Tensor::at(std::initializer_list<int64_t> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

Tensor Tensor::reshaped(Shape shape) const {
  Tensor t = *this;
  t.reshape_inplace(std::move(shape));
  return t;
}

void Tensor::reshape_inplace(Shape shape) {
  if (shape_numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor gather_axis1(const Tensor& x, std::span<const int> indices) {
  if (x.rank() < 2) throw ShapeError("gather_axis1 needs rank >= 2");
  const int64_t B = x.dim(0), C = x.dim(1);
  const int64_t inner = C == 0 ? 0 : x.numel() / (B * C);
  Shape out_shape = x.shape();
  out_shape[1] = static_cast<int64_t>(indices.size());
  Tensor out(out_shape);
  for (int64_t b = 0; b < B; ++b) {
    for (size_t j = 0; j < indices.size(); ++j) {
      const int c = indices[j];
      if (c < 0 || c >= C) throw ShapeError("gather_axis1: channel index " + std::to_string(c) + " out of range");
      std::copy_n(x.data() + (b * C + c) * inner, inner, out.data() + (b * out_shape[1] + static_cast<int64_t>(j)) * inner);
    }
  }
  return out;
}

Tensor concat_axis1(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_axis1: no inputs");
  const Shape& s0 = parts[0].shape();
  const int64_t B = s0.at(0);
  int64_t C = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size() || p.dim(0) != B || !std::equal(p.shape().begin() + 2, p.shape().end(), s0.begin() + 2))
      throw ShapeError("concat_axis1: incompatible shapes " + shape_str(s0) + " and " + shape_str(p.shape()));
    C += p.dim(1);
  }
  Shape out_shape = s0;
  out_shape[1] = C;
  Tensor out(out_shape);
  const int64_t inner = shape_numel(Shape(s0.begin() + 2, s0.end()));
  for (int64_t b = 0; b < B; ++b) {
    int64_t c_off = 0;
    for (const auto& p : parts) {
      const int64_t n = p.dim(1) * inner;
      std::copy_n(p.data() + b * n, n, out.data() + (b * C + c_off) * inner);
      c_off += p.dim(1);
    }
  }
  return out;
}

}  // namespace c3r
