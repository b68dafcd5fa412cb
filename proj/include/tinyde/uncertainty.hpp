#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tinyde/tensor.hpp"

namespace tinyde {

/// Row sums of a probability tensor may deviate from 1 by this much.
inline constexpr double kProbabilityTolerance = 1e-6;
inline constexpr double kDefaultMinVariance = 1e-6;

/// Entropy (nats) of the member-averaged distribution, one value per sample.
/// probs is [M, B, K]; every [m, b, :] row must be a probability vector.
Tensor predictive_entropy(const Tensor& probs);

struct Disagreement {
  Tensor per_class;   // [B, K]
  Tensor per_sample;  // [B], max over classes
};

/// Largest absolute difference between any two members, per class and per
/// sample. Zero for a single member.
Disagreement max_disagreement(const Tensor& probs);

struct EnsembleVariance {
  Tensor variance;  // [B, K], unbiased (divides by M - 1)
  bool degenerate = false;  // true when M == 1 and the result is all zeros
};

EnsembleVariance ensemble_variance(const Tensor& samples);

struct RegressionNll {
  Tensor per_sample;  // [B]
  double mean = 0.0;
};

/// Gaussian NLL of standardized targets under N(member mean, member variance)
/// with the variance floored at `min_var`. Adding log(target_std) expresses
/// the result in the original target units. Needs at least two members.
RegressionNll regression_nll(const Tensor& samples, const Tensor& targets, double target_std = 1.0,
                             double min_var = kDefaultMinVariance);

struct UncertaintyReport {
  bool classification = false;
  Tensor mean_prediction;   // [B, K]
  Tensor entropy;           // [B]; empty for regression
  Tensor max_disagreement;  // [B]; empty for regression
  Tensor variance;          // [B, K]
  std::optional<Tensor> nll;  // [B]; regression with targets only
};

UncertaintyReport classification_report(const Tensor& probs);
UncertaintyReport regression_report(const Tensor& samples, const Tensor* targets = nullptr,
                                    double target_std = 1.0, double min_var = kDefaultMinVariance);

/// One row per sample: sample, mean_k..., [entropy, max_disagreement],
/// variance_k..., [nll].
void write_csv(std::ostream& out, const UncertaintyReport& report);

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;
};

/// Equal-width bins on [lo, hi]. Values outside the range are clamped into the
/// first or last bin; the last bin is closed on the right.
Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

/// Columns: bin_lo, bin_hi, count.
void write_csv(std::ostream& out, const Histogram& hist);

}  // namespace tinyde
