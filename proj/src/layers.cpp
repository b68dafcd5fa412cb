#include "tinyde/layers.hpp"

#include <cmath>
#include <string>

#include "tinyde/errors.hpp"

namespace tinyde {

LinearLayer LinearLayer::uniform_init(std::size_t inputs, std::size_t outputs, Rng& rng) {
  LinearLayer layer;
  const double bound = std::sqrt(1.0 / static_cast<double>(inputs));
  layer.weight = Tensor({outputs, inputs});
  layer.bias = Tensor({outputs});
  for (auto& w : layer.weight.data()) w = rng.uniform(-bound, bound);
  for (auto& b : layer.bias.data()) b = rng.uniform(-bound, bound);
  return layer;
}

LinearForward linear_forward(const LinearLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.extent(1) != layer.inputs()) {
    throw DimensionError("linear layer expects [B," + std::to_string(layer.inputs()) + "], got " +
                         shape_string(x.shape()));
  }
  Tensor y = matmul_transposed(x, layer.weight);
  const std::size_t out = layer.outputs();
  auto yd = y.data();
  auto bd = layer.bias.data();
  for (std::size_t r = 0; r < x.extent(0); ++r)
    for (std::size_t j = 0; j < out; ++j) yd[r * out + j] += bd[j];
  return {std::move(y), LinearCache{x, layer.weight}};
}

LinearGrads linear_backward(const LinearCache& cache, const Tensor& dy) {
  if (cache.input.rank() != 2 || cache.weight.rank() != 2) {
    throw StateError("linear backward called with an empty cache");
  }
  const Shape expected{cache.input.extent(0), cache.weight.extent(0)};
  if (dy.shape() != expected) {
    throw StateError("linear backward: dy " + shape_string(dy.shape()) + " does not match output " +
                     shape_string(expected));
  }
  LinearGrads g;
  g.dinput = matmul(dy, cache.weight);
  g.dweight = transposed_matmul(dy, cache.input);
  g.dbias = reduce(dy, {0}, ReduceKind::sum);
  if (dy.extent(0) == 0) g.dbias = Tensor({expected[1]});
  return g;
}

NormParams NormParams::init(std::size_t features, NormKind kind, double eps, double momentum) {
  NormParams p;
  p.gamma = Tensor::ones({features});
  p.beta = Tensor::zeros({features});
  p.running_mean = Tensor::zeros({features});
  p.running_var = Tensor::ones({features});
  p.eps = eps;
  p.momentum = momentum;
  p.kind = kind;
  p.validate();
  return p;
}

void NormParams::reset() { *this = init(features(), kind, eps, momentum); }

void NormParams::validate() const {
  const std::size_t f = gamma.size();
  if (gamma.rank() != 1 || beta.shape() != gamma.shape() || running_mean.shape() != gamma.shape() ||
      running_var.shape() != gamma.shape()) {
    throw DimensionError("normalization parameters disagree in shape (F=" + std::to_string(f) + ")");
  }
  if (!(eps > 0.0)) throw ValueError("normalization eps must be positive");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ValueError("normalization momentum must lie in (0,1)");
  for (double v : running_var.data())
    if (v < 0.0) throw ValueError("running variance must be nonnegative");
}

namespace {

struct NormView {
  const double* gamma;
  const double* beta;
  double* running_mean;
  double* running_var;
  double eps;
  double momentum;
  NormKind kind;
};

// Normalizes a [rows, F] block that starts at `x`, writing `y`. Shared by the
// plain and the ensemble layer so both run the exact same arithmetic.
NormCache normalize_block(const double* x, double* y, std::size_t rows, std::size_t features,
                          const NormView& p, Mode mode) {
  NormCache cache;
  cache.kind = p.kind;
  cache.mode = mode;
  cache.normalized = Tensor({rows, features});
  cache.gamma = Tensor({features}, std::vector<double>(p.gamma, p.gamma + features));
  double* xhat = cache.normalized.data().data();

  if (p.kind == NormKind::batch) {
    std::vector<double> mean(features), var(features);
    if (mode == Mode::train) {
      if (rows < 2) {
        throw DegenerateInputError("batch normalization in train mode needs at least 2 rows, got " +
                                   std::to_string(rows));
      }
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t f = 0; f < features; ++f) mean[f] += x[r * features + f];
      for (auto& m : mean) m /= static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t f = 0; f < features; ++f) {
          const double d = x[r * features + f] - mean[f];
          var[f] += d * d;
        }
      for (auto& v : var) v /= static_cast<double>(rows);
      for (std::size_t f = 0; f < features; ++f) {
        p.running_mean[f] = (1.0 - p.momentum) * p.running_mean[f] + p.momentum * mean[f];
        p.running_var[f] = (1.0 - p.momentum) * p.running_var[f] + p.momentum * var[f];
      }
    } else {
      for (std::size_t f = 0; f < features; ++f) {
        mean[f] = p.running_mean[f];
        var[f] = p.running_var[f];
      }
    }
    cache.inv_std.resize(features);
    for (std::size_t f = 0; f < features; ++f) cache.inv_std[f] = 1.0 / std::sqrt(var[f] + p.eps);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t f = 0; f < features; ++f) {
        const std::size_t i = r * features + f;
        xhat[i] = (x[i] - mean[f]) * cache.inv_std[f];
        y[i] = p.gamma[f] * xhat[i] + p.beta[f];
      }
    return cache;
  }

  if (features < 2) {
    throw DegenerateInputError("layer normalization needs at least 2 features");
  }
  cache.inv_std.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * features;
    double mean = 0.0;
    for (std::size_t f = 0; f < features; ++f) mean += xr[f];
    mean /= static_cast<double>(features);
    double var = 0.0;
    for (std::size_t f = 0; f < features; ++f) var += (xr[f] - mean) * (xr[f] - mean);
    var /= static_cast<double>(features);
    const double inv = 1.0 / std::sqrt(var + p.eps);
    cache.inv_std[r] = inv;
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      xhat[i] = (x[i] - mean) * inv;
      y[i] = p.gamma[f] * xhat[i] + p.beta[f];
    }
  }
  return cache;
}

// Backward of one block; writes dx and accumulates into dgamma/dbeta rows.
void backward_block(const NormCache& cache, const double* dy, double* dx, double* dgamma,
                    double* dbeta) {
  const std::size_t rows = cache.normalized.extent(0);
  const std::size_t features = cache.normalized.extent(1);
  const double* xhat = cache.normalized.data().data();
  const double* gamma = cache.gamma.data().data();

  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      dgamma[f] += dy[i] * xhat[i];
      dbeta[f] += dy[i];
    }

  if (cache.kind == NormKind::batch) {
    if (cache.mode == Mode::eval) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t f = 0; f < features; ++f) {
          const std::size_t i = r * features + f;
          dx[i] = dy[i] * gamma[f] * cache.inv_std[f];
        }
      return;
    }
    const double n = static_cast<double>(rows);
    std::vector<double> sum_dy(features, 0.0), sum_dy_xhat(features, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t f = 0; f < features; ++f) {
        const std::size_t i = r * features + f;
        sum_dy[f] += dy[i];
        sum_dy_xhat[f] += dy[i] * xhat[i];
      }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t f = 0; f < features; ++f) {
        const std::size_t i = r * features + f;
        dx[i] = gamma[f] * cache.inv_std[f] / n *
                (n * dy[i] - sum_dy[f] - xhat[i] * sum_dy_xhat[f]);
      }
    return;
  }

  const double n = static_cast<double>(features);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum_g = 0.0, sum_g_xhat = 0.0;
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      const double g = dy[i] * gamma[f];
      sum_g += g;
      sum_g_xhat += g * xhat[i];
    }
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      const double g = dy[i] * gamma[f];
      dx[i] = cache.inv_std[r] / n * (n * g - sum_g - xhat[i] * sum_g_xhat);
    }
  }
}

void check_norm_input(const Tensor& x, std::size_t features, const char* what) {
  if (x.rank() != 2 || x.extent(1) != features) {
    throw DimensionError(std::string(what) + " expects [B," + std::to_string(features) + "], got " +
                         shape_string(x.shape()));
  }
}

}  // namespace

NormForward norm_forward(NormParams& params, const Tensor& x, Mode mode) {
  const std::size_t features = params.features();
  check_norm_input(x, features, "normalization");
  Tensor y(x.shape());
  NormView view{params.gamma.data().data(), params.beta.data().data(),
                params.running_mean.data().data(), params.running_var.data().data(),
                params.eps, params.momentum, params.kind};
  NormCache cache = normalize_block(x.data().data(), y.data().data(), x.extent(0), features, view, mode);
  return {std::move(y), std::move(cache)};
}

NormForward norm_forward(const NormParams& params, const Tensor& x) {
  // Eval mode reads the running statistics and never writes through the view.
  return norm_forward(const_cast<NormParams&>(params), x, Mode::eval);
}

NormGrads norm_backward(const NormCache& cache, const Tensor& dy) {
  if (cache.normalized.rank() != 2) throw StateError("normalization backward called with an empty cache");
  if (dy.shape() != cache.normalized.shape()) {
    throw StateError("normalization backward: dy " + shape_string(dy.shape()) +
                     " does not match cached " + shape_string(cache.normalized.shape()));
  }
  const std::size_t features = cache.normalized.extent(1);
  NormGrads g{Tensor(dy.shape()), Tensor({features}), Tensor({features})};
  backward_block(cache, dy.data().data(), g.dinput.data().data(), g.dgamma.data().data(),
                 g.dbeta.data().data());
  return g;
}

EnsembleNormParams EnsembleNormParams::init(std::size_t members, std::size_t features, NormKind kind,
                                            double eps, double momentum) {
  return from_members(std::vector<NormParams>(members, NormParams::init(features, kind, eps, momentum)));
}

EnsembleNormParams EnsembleNormParams::from_members(const std::vector<NormParams>& members) {
  if (members.empty()) throw ValueError("an ensemble normalization needs at least one member");
  const NormParams& first = members.front();
  const std::size_t f = first.features();
  EnsembleNormParams p;
  p.members = members.size();
  p.eps = first.eps;
  p.momentum = first.momentum;
  p.kind = first.kind;
  p.gamma = Tensor({p.members, f});
  p.beta = Tensor({p.members, f});
  p.running_mean = Tensor({p.members, f});
  p.running_var = Tensor({p.members, f});
  for (std::size_t m = 0; m < p.members; ++m) {
    const NormParams& src = members[m];
    if (src.features() != f || src.eps != p.eps || src.momentum != p.momentum || src.kind != p.kind) {
      throw ValueError("member " + std::to_string(m) + " normalization settings differ from member 0");
    }
    p.set_member(m, src);
  }
  return p;
}

NormParams EnsembleNormParams::member(std::size_t m) const {
  if (m >= members) {
    throw IndexError("member " + std::to_string(m) + " out of range for ensemble of " +
                     std::to_string(members));
  }
  NormParams p;
  p.gamma = gamma.row(m);
  p.beta = beta.row(m);
  p.running_mean = running_mean.row(m);
  p.running_var = running_var.row(m);
  p.eps = eps;
  p.momentum = momentum;
  p.kind = kind;
  return p;
}

void EnsembleNormParams::set_member(std::size_t m, const NormParams& p) {
  if (m >= members) {
    throw IndexError("member " + std::to_string(m) + " out of range for ensemble of " +
                     std::to_string(members));
  }
  const std::size_t f = features();
  if (p.features() != f) throw DimensionError("member parameters have the wrong feature count");
  for (std::size_t j = 0; j < f; ++j) {
    gamma(m, j) = p.gamma[j];
    beta(m, j) = p.beta[j];
    running_mean(m, j) = p.running_mean[j];
    running_var(m, j) = p.running_var[j];
  }
}

std::vector<NormParams> EnsembleNormParams::unstack() const {
  std::vector<NormParams> out;
  out.reserve(members);
  for (std::size_t m = 0; m < members; ++m) out.push_back(member(m));
  return out;
}

EnsembleNormForward ensemblenorm_forward(EnsembleNormParams& params, const Tensor& x, Mode mode) {
  const std::size_t features = params.features();
  check_norm_input(x, features, "ensemble normalization");
  const std::size_t m_count = params.members;
  if (m_count == 0 || x.extent(0) % m_count != 0) {
    throw DimensionError("ensemble normalization: leading extent " + std::to_string(x.extent(0)) +
                         " is not divisible by M=" + std::to_string(m_count));
  }
  const std::size_t rows = x.extent(0) / m_count;
  Tensor y(x.shape());
  EnsembleNormForward out;
  out.cache.members = m_count;
  out.cache.blocks.reserve(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    const std::size_t offset = m * rows * features;
    NormView view{params.gamma.data().data() + m * features, params.beta.data().data() + m * features,
                  params.running_mean.data().data() + m * features,
                  params.running_var.data().data() + m * features, params.eps, params.momentum,
                  params.kind};
    out.cache.blocks.push_back(
        normalize_block(x.data().data() + offset, y.data().data() + offset, rows, features, view, mode));
  }
  out.output = std::move(y);
  return out;
}

EnsembleNormForward ensemblenorm_forward(const EnsembleNormParams& params, const Tensor& x) {
  return ensemblenorm_forward(const_cast<EnsembleNormParams&>(params), x, Mode::eval);
}

NormGrads ensemblenorm_backward(const EnsembleNormCache& cache, const Tensor& dy) {
  if (cache.blocks.size() != cache.members || cache.members == 0) {
    throw StateError("ensemble normalization backward called with an empty cache");
  }
  const std::size_t rows = cache.blocks.front().normalized.extent(0);
  const std::size_t features = cache.blocks.front().normalized.extent(1);
  const Shape expected{rows * cache.members, features};
  if (dy.shape() != expected) {
    throw StateError("ensemble normalization backward: dy " + shape_string(dy.shape()) +
                     " does not match cached " + shape_string(expected));
  }
  NormGrads g{Tensor(expected), Tensor({cache.members, features}), Tensor({cache.members, features})};
  for (std::size_t m = 0; m < cache.members; ++m) {
    const std::size_t offset = m * rows * features;
    backward_block(cache.blocks[m], dy.data().data() + offset, g.dinput.data().data() + offset,
                   g.dgamma.data().data() + m * features, g.dbeta.data().data() + m * features);
  }
  return g;
}

Relu6Forward relu6_forward(const Tensor& x) { return {map(x, UnaryFn::relu6), Relu6Cache{x}}; }

Tensor relu6_backward(const Relu6Cache& cache, const Tensor& dy) {
  if (dy.shape() != cache.input.shape()) {
    throw StateError("relu6 backward: dy " + shape_string(dy.shape()) + " does not match cached " +
                     shape_string(cache.input.shape()));
  }
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const double x = cache.input[i];
    dx[i] = (x > 0.0 && x < 6.0) ? dy[i] : 0.0;
  }
  return dx;
}

}  // namespace tinyde
