#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace c3r {

using Shape = std::vector<int64_t>;

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when user-provided configuration, manifests or schemas are invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when tensor shapes do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised on NaN/Inf during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense row-major tensor of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  /// Same data, new shape; numel must match.
  Tensor reshaped(Shape shape) const;
  void reshape_inplace(Shape shape);

  void fill(double v);
  bool all_finite() const;
  double sum() const;
  double max_abs() const;

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  int64_t offset(std::initializer_list<int64_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Gathers indices along axis 1 of a tensor whose shape is [B, C, ...].
Tensor gather_axis1(const Tensor& x, std::span<const int> indices);

/// Concatenates tensors of shape [B, C_i, ...] along axis 1.
Tensor concat_axis1(std::span<const Tensor> parts);

}  // namespace c3r
