#include "tinyde/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "tinyde/errors.hpp"

namespace tinyde {

namespace {

void require_stack(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw DimensionError(std::string(what) + " expects [M, B, K] samples, got " + shape_string(t.shape()));
  }
  if (t.extent(0) == 0) throw ValueError(std::string(what) + " needs at least one member");
}

void require_probabilities(const Tensor& probs, const char* what) {
  require_stack(probs, what);
  const std::size_t rows = probs.extent(0) * probs.extent(1), k = probs.extent(2);
  const auto data = probs.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = data[r * k + j];
      if (!(p >= -kProbabilityTolerance)) {
        throw ValueError(std::string(what) + ": negative or NaN probability in row " + std::to_string(r));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbabilityTolerance) {
      throw ValueError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
  }
}

}  // namespace

Tensor predictive_entropy(const Tensor& probs) {
  require_probabilities(probs, "predictive_entropy");
  const Tensor mean = reduce(probs, {0}, ReduceKind::mean);
  const std::size_t b = mean.extent(0), k = mean.extent(1);
  Tensor h({b});
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = mean(i, j);
      if (p > 0.0) s -= p * std::log(p);
    }
    h[i] = s;
  }
  return h;
}

Disagreement max_disagreement(const Tensor& probs) {
  require_probabilities(probs, "max_disagreement");
  const std::size_t m = probs.extent(0), b = probs.extent(1), k = probs.extent(2);
  Disagreement d{Tensor({b, k}), Tensor({b})};
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t c = a + 1; c < m; ++c) {
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          d.per_class(i, j) = std::max(d.per_class(i, j), std::abs(probs(a, i, j) - probs(c, i, j)));
        }
      }
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < k; ++j) d.per_sample[i] = std::max(d.per_sample[i], d.per_class(i, j));
  }
  return d;
}

EnsembleVariance ensemble_variance(const Tensor& samples) {
  require_stack(samples, "ensemble_variance");
  const std::size_t m = samples.extent(0);
  if (m == 1) return {Tensor({samples.extent(1), samples.extent(2)}), true};
  // Population variance rescaled to the unbiased estimator.
  Tensor v = reduce(samples, {0}, ReduceKind::variance);
  const double scale = static_cast<double>(m) / static_cast<double>(m - 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= scale;
  return {std::move(v), false};
}

RegressionNll regression_nll(const Tensor& samples, const Tensor& targets, double target_std, double min_var) {
  require_stack(samples, "regression_nll");
  if (samples.extent(0) < 2) throw ValueError("regression_nll needs at least two members");
  if (samples.extent(2) != 1) throw DimensionError("regression_nll expects one output per sample");
  if (targets.shape() != Shape{samples.extent(1), 1}) {
    throw DimensionError("regression_nll: targets " + shape_string(targets.shape()) + " vs samples " +
                         shape_string(samples.shape()));
  }
  if (!(target_std > 0.0)) throw ValueError("target_std must be positive");
  if (!(min_var > 0.0)) throw ValueError("min_var must be positive");

  const Tensor mu = reduce(samples, {0}, ReduceKind::mean);
  const Tensor var = ensemble_variance(samples).variance;
  const std::size_t b = samples.extent(1);
  const double log_scale = std::log(target_std);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);

  RegressionNll r{Tensor({b}), 0.0};
  for (std::size_t i = 0; i < b; ++i) {
    const double s2 = std::max(var(i, 0), min_var);
    const double d = targets(i, 0) - mu(i, 0);
    r.per_sample[i] = half_log_2pi + 0.5 * std::log(s2) + d * d / (2.0 * s2) + log_scale;
    r.mean += r.per_sample[i];
  }
  if (b > 0) r.mean /= static_cast<double>(b);
  return r;
}

UncertaintyReport classification_report(const Tensor& probs) {
  UncertaintyReport r;
  r.classification = true;
  r.mean_prediction = reduce(probs, {0}, ReduceKind::mean);
  r.entropy = predictive_entropy(probs);
  r.max_disagreement = max_disagreement(probs).per_sample;
  r.variance = ensemble_variance(probs).variance;
  return r;
}

UncertaintyReport regression_report(const Tensor& samples, const Tensor* targets, double target_std,
                                    double min_var) {
  require_stack(samples, "regression_report");
  UncertaintyReport r;
  r.mean_prediction = reduce(samples, {0}, ReduceKind::mean);
  r.variance = ensemble_variance(samples).variance;
  if (targets && samples.extent(0) >= 2) {
    r.nll = regression_nll(samples, *targets, target_std, min_var).per_sample;
  }
  return r;
}

void write_csv(std::ostream& out, const UncertaintyReport& report) {
  const std::size_t b = report.mean_prediction.extent(0), k = report.mean_prediction.extent(1);
  const bool classification = report.classification;
  out << "sample";
  for (std::size_t j = 0; j < k; ++j) out << ",mean_" << j;
  if (classification) out << ",entropy,max_disagreement";
  for (std::size_t j = 0; j < k; ++j) out << ",variance_" << j;
  if (report.nll) out << ",nll";
  out << '\n';
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < b; ++i) {
    out << i;
    for (std::size_t j = 0; j < k; ++j) out << ',' << report.mean_prediction(i, j);
    if (classification) out << ',' << report.entropy[i] << ',' << report.max_disagreement[i];
    for (std::size_t j = 0; j < k; ++j) out << ',' << report.variance(i, j);
    if (report.nll) out << ',' << (*report.nll)[i];
    out << '\n';
  }
  out.precision(old_precision);
}

Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  if (bins == 0) throw ValueError("histogram needs at least one bin");
  if (!(hi > lo)) throw ValueError("histogram range must satisfy hi > lo");
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    if (std::isnan(v)) continue;
    const double pos = std::floor((v - lo) / width);
    const auto idx = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[idx];
  }
  return h;
}

void write_csv(std::ostream& out, const Histogram& hist) {
  out << "bin_lo,bin_hi,count\n";
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    out << hist.edges[i] << ',' << hist.edges[i + 1] << ',' << hist.counts[i] << '\n';
  }
  out.precision(old_precision);
}

}  // namespace tinyde
