#include "tinyde/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tinyde/errors.hpp"

namespace tinyde {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_volume(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_volume(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_volume(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw DimensionError("row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_string(shape_));
  }
  const std::size_t stride = shape_volume(Shape(shape_.begin() + 1, shape_.end()));
  Shape out = shape_;
  out[0] = end - begin;
  return Tensor(std::move(out), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                     data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

Tensor Tensor::row(std::size_t index) const {
  Tensor r = slice_rows(index, index + 1);
  return r.reshape(Shape(shape_.begin() + 1, shape_.end()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t rows = a.extent(0), inner = a.extent(1), cols = b.extent(1);
  Tensor out({rows, cols});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    double* orow = po + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = pa[i * inner + k];
      const double* brow = pb + k * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(1)) {
    throw DimensionError("matmul_transposed shape mismatch: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  const std::size_t rows = a.extent(0), inner = a.extent(1), cols = b.extent(0);
  Tensor out({rows, cols});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* arow = pa + i * inner;
    for (std::size_t j = 0; j < cols; ++j) {
      const double* brow = pb + j * inner;
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
      po[i * cols + j] = acc;
    }
  }
  return out;
}

Tensor transposed_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0)) {
    throw DimensionError("transposed_matmul shape mismatch: " + shape_string(a.shape()) +
                         "^T x " + shape_string(b.shape()));
  }
  const std::size_t inner = a.extent(0), rows = a.extent(1), cols = b.extent(1);
  Tensor out({rows, cols});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t k = 0; k < inner; ++k) {
    const double* arow = pa + k * rows;
    const double* brow = pb + k * cols;
    for (std::size_t i = 0; i < rows; ++i) {
      const double aki = arow[i];
      double* orow = po + i * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_string(a.shape()));
  Tensor out({a.extent(1), a.extent(0)});
  for (std::size_t i = 0; i < a.extent(0); ++i)
    for (std::size_t j = 0; j < a.extent(1); ++j) out(j, i) = a(i, j);
  return out;
}

namespace {

// Maps each flat input index to the flat index of its reduced output cell.
std::vector<std::size_t> reduction_targets(const Shape& shape, const std::vector<bool>& reduced,
                                           Shape& out_shape) {
  out_shape.clear();
  for (std::size_t a = 0; a < shape.size(); ++a)
    if (!reduced[a]) out_shape.push_back(shape[a]);

  const std::size_t n = shape_volume(shape);
  std::vector<std::size_t> target(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t t = 0;
    for (std::size_t a = 0; a < shape.size(); ++a)
      if (!reduced[a]) t = t * shape[a] + idx[a];
    target[flat] = t;
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return target;
}

}  // namespace

Tensor reduce(const Tensor& t, const std::vector<std::size_t>& axes, ReduceKind kind) {
  std::vector<bool> reduced(t.rank(), false);
  std::size_t count = 1;
  for (auto a : axes) {
    if (a >= t.rank() || reduced[a]) {
      throw DimensionError("invalid reduction axis " + std::to_string(a) + " for shape " +
                           shape_string(t.shape()));
    }
    reduced[a] = true;
    count *= t.extent(a);
  }
  if (count == 0) {
    throw DegenerateInputError("reduction over an empty extent for shape " +
                               shape_string(t.shape()));
  }

  Shape out_shape;
  const auto target = reduction_targets(t.shape(), reduced, out_shape);
  const std::size_t out_n = shape_volume(out_shape);
  const auto in = t.data();

  switch (kind) {
    case ReduceKind::sum:
    case ReduceKind::mean: {
      std::vector<double> acc(out_n, 0.0);
      for (std::size_t i = 0; i < in.size(); ++i) acc[target[i]] += in[i];
      if (kind == ReduceKind::mean)
        for (auto& v : acc) v /= static_cast<double>(count);
      return Tensor(out_shape, std::move(acc));
    }
    case ReduceKind::variance: {
      std::vector<double> mean(out_n, 0.0);
      for (std::size_t i = 0; i < in.size(); ++i) mean[target[i]] += in[i];
      for (auto& v : mean) v /= static_cast<double>(count);
      std::vector<double> acc(out_n, 0.0);
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double d = in[i] - mean[target[i]];
        acc[target[i]] += d * d;
      }
      for (auto& v : acc) v /= static_cast<double>(count);
      return Tensor(out_shape, std::move(acc));
    }
    case ReduceKind::max: {
      std::vector<double> acc(out_n, -std::numeric_limits<double>::infinity());
      for (std::size_t i = 0; i < in.size(); ++i) acc[target[i]] = std::max(acc[target[i]], in[i]);
      return Tensor(out_shape, std::move(acc));
    }
  }
  throw ValueError("unknown reduction kind");
}

namespace {

double apply_unary(UnaryFn fn, double x) {
  switch (fn) {
    case UnaryFn::identity: return x;
    case UnaryFn::neg: return -x;
    case UnaryFn::abs: return std::abs(x);
    case UnaryFn::square: return x * x;
    case UnaryFn::sqrt: return std::sqrt(x);
    case UnaryFn::exp: return std::exp(x);
    case UnaryFn::log: return std::log(x);
    case UnaryFn::relu6: return std::min(std::max(x, 0.0), 6.0);
  }
  return x;
}

double apply_binary(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::div: return a / b;
    case BinaryOp::absdiff: return std::abs(a - b);
  }
  return 0.0;
}

}  // namespace

Tensor map(const Tensor& t, UnaryFn fn) {
  Tensor out = t;
  for (auto& v : out.data()) v = apply_unary(fn, v);
  return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("shapes " + shape_string(a) + " and " + shape_string(b) +
                           " are not broadcast-compatible");
    }
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

Tensor zip(const Tensor& a, const Tensor& b, BinaryOp op) {
  if (a.shape() == b.shape()) {
    Tensor out = a;
    auto pb = b.data();
    auto po = out.data();
    for (std::size_t i = 0; i < po.size(); ++i) po[i] = apply_binary(op, po[i], pb[i]);
    return out;
  }

  const Shape shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t rank = shape.size();
  // Strides of each operand in the broadcast index space; stretched axes get 0.
  auto strides_for = [&](const Shape& s) {
    std::vector<std::size_t> st(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
      const std::size_t axis = i + (rank - s.size());
      st[axis] = s[i] == 1 ? 0 : stride;
      stride *= s[i];
    }
    return st;
  };
  const auto sa = strides_for(a.shape());
  const auto sb = strides_for(b.shape());

  Tensor out(shape);
  std::vector<std::size_t> idx(rank, 0);
  auto pa = a.data();
  auto pb = b.data();
  auto po = out.data();
  for (std::size_t flat = 0; flat < po.size(); ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    po[flat] = apply_binary(op, pa[ia], pb[ib]);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

Tensor tile_rows(const Tensor& t, std::size_t times) {
  if (t.rank() == 0) throw DimensionError("cannot tile a rank-0 tensor");
  Shape shape = t.shape();
  shape[0] *= times;
  std::vector<double> data;
  data.reserve(t.size() * times);
  for (std::size_t i = 0; i < times; ++i) data.insert(data.end(), t.values().begin(), t.values().end());
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw DimensionError("concat_rows needs rank >= 1");
  shape[0] = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw DimensionError("concat_rows trailing extents differ: " + shape_string(p.shape()) +
                           " vs " + shape_string(parts.front().shape()));
    }
    shape[0] += p.extent(0);
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  if (t.rank() == 0) throw DimensionError("gather_rows needs rank >= 1");
  const std::size_t n = t.extent(0);
  const std::size_t stride = shape_volume(Shape(t.shape().begin() + 1, t.shape().end()));
  Shape shape = t.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) {
      throw IndexError("row index " + std::to_string(indices[r]) + " out of range " + std::to_string(n));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[r] * stride), stride,
                dst.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return out;
}

Tensor softmax_last(const Tensor& logits) {
  if (logits.rank() == 0) throw DimensionError("softmax needs rank >= 1");
  const std::size_t k = logits.shape().back();
  Tensor out = logits;
  auto d = out.data();
  for (std::size_t base = 0; base + k <= d.size() && k > 0; base += k) {
    double mx = d[base];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, d[base + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      d[base + j] = std::exp(d[base + j] - mx);
      s += d[base + j];
    }
    for (std::size_t j = 0; j < k; ++j) d[base + j] /= s;
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tinyde
