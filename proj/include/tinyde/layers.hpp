#pragma once

#include <cstddef>
#include <vector>

#include "tinyde/rng.hpp"
#include "tinyde/tensor.hpp"

namespace tinyde {

enum class Mode { train, eval };

/// Which axis the normalization statistics are taken over: `batch` pools a
/// feature across the rows of the batch and tracks running statistics,
/// `layer` pools the features of one row and keeps no running state.
enum class NormKind { batch, layer };

inline constexpr double kDefaultNormEps = 1e-5;
inline constexpr double kDefaultNormMomentum = 0.1;

struct LinearLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  bool frozen = false;

  std::size_t inputs() const { return weight.extent(1); }
  std::size_t outputs() const { return weight.extent(0); }

  /// Weights and biases uniform in ±sqrt(1/inputs).
  static LinearLayer uniform_init(std::size_t inputs, std::size_t outputs, Rng& rng);

  friend bool operator==(const LinearLayer&, const LinearLayer&) = default;
};

struct LinearCache {
  Tensor input;
  Tensor weight;
};

struct LinearForward {
  Tensor output;
  LinearCache cache;
};

struct LinearGrads {
  Tensor dinput;
  Tensor dweight;
  Tensor dbias;
};

/// y = x·Wᵀ + b
LinearForward linear_forward(const LinearLayer& layer, const Tensor& x);
LinearGrads linear_backward(const LinearCache& cache, const Tensor& dy);

struct NormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = kDefaultNormEps;
  double momentum = kDefaultNormMomentum;
  NormKind kind = NormKind::batch;

  std::size_t features() const { return gamma.size(); }

  /// gamma = 1, beta = 0, running_mean = 0, running_var = 1.
  static NormParams init(std::size_t features, NormKind kind = NormKind::batch,
                         double eps = kDefaultNormEps, double momentum = kDefaultNormMomentum);
  void reset();
  void validate() const;

  friend bool operator==(const NormParams&, const NormParams&) = default;
};

struct NormCache {
  NormKind kind = NormKind::batch;
  Mode mode = Mode::eval;
  Tensor normalized;            // x̂, [B, F]
  std::vector<double> inv_std;  // per feature (batch) or per row (layer)
  Tensor gamma;
};

struct NormForward {
  Tensor output;
  NormCache cache;
};

struct NormGrads {
  Tensor dinput;
  Tensor dgamma;
  Tensor dbeta;
};

/// y = γ·(x−μ)/sqrt(σ²+ε) + β with population variance. Train mode on the
/// batch variant needs at least two rows and folds the batch statistics into
/// the running estimates; eval mode reads them instead.
NormForward norm_forward(NormParams& params, const Tensor& x, Mode mode);

/// Eval-mode forward that leaves the parameters untouched.
NormForward norm_forward(const NormParams& params, const Tensor& x);

/// Full backward, including the dependence of μ and σ² on x in train mode.
NormGrads norm_backward(const NormCache& cache, const Tensor& dy);

/// Normalization parameters for M members stacked along a leading axis.
struct EnsembleNormParams {
  std::size_t members = 0;
  Tensor gamma;         // [M, F]
  Tensor beta;          // [M, F]
  Tensor running_mean;  // [M, F]
  Tensor running_var;   // [M, F]
  double eps = kDefaultNormEps;
  double momentum = kDefaultNormMomentum;
  NormKind kind = NormKind::batch;

  std::size_t features() const { return gamma.rank() == 2 ? gamma.extent(1) : 0; }

  static EnsembleNormParams init(std::size_t members, std::size_t features,
                                 NormKind kind = NormKind::batch, double eps = kDefaultNormEps,
                                 double momentum = kDefaultNormMomentum);

  /// Stacks per-member parameters; all members must agree on F, ε, momentum and kind.
  static EnsembleNormParams from_members(const std::vector<NormParams>& members);

  NormParams member(std::size_t m) const;
  void set_member(std::size_t m, const NormParams& p);
  std::vector<NormParams> unstack() const;

  friend bool operator==(const EnsembleNormParams&, const EnsembleNormParams&) = default;
};

struct EnsembleNormCache {
  std::size_t members = 0;
  std::vector<NormCache> blocks;
};

struct EnsembleNormForward {
  Tensor output;
  EnsembleNormCache cache;
};

/// x is [M·B, F]; rows [m·B, (m+1)·B) belong to member m and are normalized
/// with that member's statistics and affine parameters only.
EnsembleNormForward ensemblenorm_forward(EnsembleNormParams& params, const Tensor& x, Mode mode);
EnsembleNormForward ensemblenorm_forward(const EnsembleNormParams& params, const Tensor& x);

/// dgamma and dbeta come back as [M, F]; no gradient crosses member blocks.
NormGrads ensemblenorm_backward(const EnsembleNormCache& cache, const Tensor& dy);

struct Relu6Cache {
  Tensor input;
};

struct Relu6Forward {
  Tensor output;
  Relu6Cache cache;
};

Relu6Forward relu6_forward(const Tensor& x);

/// Passes dy where 0 < x < 6; the subgradient at both kinks is taken as 0.
Tensor relu6_backward(const Relu6Cache& cache, const Tensor& dy);

}  // namespace tinyde
