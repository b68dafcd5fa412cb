#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tinyde {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Dense row-major array of doubles. A Tensor is a plain value: copying it
/// copies the data, and no operation in this library aliases storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Rank-2 accessors; callers are expected to have checked the rank.
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  // Rank-3 accessors.
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Reinterprets the data under a new shape of equal volume.
  Tensor reshape(Shape shape) const;

  /// Rows [begin, end) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  /// Row `index` along axis 0, with that axis dropped.
  Tensor row(std::size_t index) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class ReduceKind { mean, variance, max, sum };

enum class UnaryFn { identity, neg, abs, square, sqrt, exp, log, relu6 };

enum class BinaryOp { add, sub, mul, div, absdiff };

Tensor matmul(const Tensor& a, const Tensor& b);

/// a · bᵀ without materializing the transpose.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

/// aᵀ · b without materializing the transpose.
Tensor transposed_matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

/// Reduces over `axes` and removes them. Variance is the population
/// variance (divides by the reduced extent).
Tensor reduce(const Tensor& t, const std::vector<std::size_t>& axes, ReduceKind kind);

Tensor map(const Tensor& t, UnaryFn fn);

/// Elementwise binary op with numpy-style broadcasting: shapes are aligned
/// from the trailing axis, missing leading axes count as extent 1, and an
/// extent of 1 stretches to match the other operand.
Tensor zip(const Tensor& a, const Tensor& b, BinaryOp op);

Shape broadcast_shape(const Shape& a, const Shape& b);

/// Repeats the tensor `times` times along axis 0.
Tensor tile_rows(const Tensor& t, std::size_t times);

/// Concatenates along axis 0; trailing extents must agree.
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Gathers rows of a rank-2 (or higher) tensor by index.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

/// Row-wise softmax over the last axis, computed with max subtraction.
Tensor softmax_last(const Tensor& logits);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace tinyde
