#pragma once

// Independent reference implementations and helpers shared by the unit tests.
// Nothing here calls into the library's numerics beyond constructing tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tinyde/tensor.hpp"

namespace testing {

using tinyde::Shape;
using tinyde::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(gen);
  return t;
}

inline std::size_t uniform_int(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.values()[i * k + p] * b.values()[p * c + j];
      out(i, j) = s;
    }
  return out;
}

/// Batch statistics of one column block, straight from the definition.
inline void column_moments(const std::vector<double>& col, double& mean, double& var) {
  mean = 0.0;
  for (double v : col) mean += v;
  mean /= static_cast<double>(col.size());
  var = 0.0;
  for (double v : col) var += (v - mean) * (v - mean);
  var /= static_cast<double>(col.size());
}

/// Reference batch-statistics normalization y = γ(x − μ)/√(σ² + ε) + β.
inline Tensor reference_batch_norm(const Tensor& x, const std::vector<double>& gamma, const std::vector<double>& beta,
                                   double eps) {
  const std::size_t b = x.shape()[0], f = x.shape()[1];
  Tensor y({b, f});
  for (std::size_t j = 0; j < f; ++j) {
    std::vector<double> col(b);
    for (std::size_t i = 0; i < b; ++i) col[i] = x(i, j);
    double mu, var;
    column_moments(col, mu, var);
    for (std::size_t i = 0; i < b; ++i) y(i, j) = gamma[j] * (x(i, j) - mu) / std::sqrt(var + eps) + beta[j];
  }
  return y;
}

/// Central difference of a scalar function with respect to every entry of `x`.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max |a − b| / max(1, max|b|); scale-aware relative error of a gradient.
inline double relative_error(const Tensor& analytic, const Tensor& numeric) {
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / scale;
}

/// Σ w ⊙ t: a random linear functional turns any output into a scalar loss
/// whose gradient with respect to the output is exactly w.
inline double weighted_sum(const Tensor& t, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

}  // namespace testing
