#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "tinyde/errors.hpp"
#include "tinyde/uncertainty.hpp"

using namespace tinyde;

namespace {

Tensor stack(const std::vector<std::vector<std::vector<double>>>& v) {
  const std::size_t m = v.size(), b = v[0].size(), k = v[0][0].size();
  Tensor t({m, b, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t c = 0; c < k; ++c) t(i, j, c) = v[i][j][c];
  return t;
}

// Random probability rows: normalized exponentials, with some exact zeros.
Tensor random_probs(std::size_t m, std::size_t b, std::size_t k, std::mt19937_64& gen) {
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution drop(0.2);
  Tensor t({m, b, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        t(i, j, c) = (c > 0 && drop(gen)) ? 0.0 : e(gen);
        s += t(i, j, c);
      }
      for (std::size_t c = 0; c < k; ++c) t(i, j, c) /= s;
    }
  return t;
}

Tensor permute_members(const Tensor& t, const std::vector<std::size_t>& order) {
  std::vector<Tensor> rows;
  for (auto m : order) rows.push_back(t.slice_rows(m, m + 1));
  return concat_rows(rows);
}

// Pairwise-loop oracle for the disagreement, written independently.
double oracle_md(const Tensor& p, std::size_t b) {
  double best = 0.0;
  for (std::size_t i = 0; i < p.extent(0); ++i)
    for (std::size_t j = 0; j < p.extent(0); ++j)
      for (std::size_t c = 0; c < p.extent(2); ++c) best = std::max(best, std::abs(p(i, b, c) - p(j, b, c)));
  return best;
}

}  // namespace

TEST_CASE("entropy examples") {
  const Tensor uniform({1, 1, 10}, 0.1);
  CHECK(predictive_entropy(uniform)[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(predictive_entropy(uniform)[0] == doctest::Approx(2.302585).epsilon(1e-6));

  CHECK(predictive_entropy(stack({{{0, 1, 0}}, {{0, 1, 0}}}))[0] == 0.0);

  // H([0.5, 0.5]) by the direct formula
  const double h = -(0.5 * std::log(0.5) + 0.5 * std::log(0.5));
  CHECK(predictive_entropy(stack({{{1, 0}}, {{0, 1}}}))[0] == doctest::Approx(h).epsilon(1e-15));
  CHECK(h == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("entropy rejects rows that are not distributions") {
  CHECK_THROWS_AS(predictive_entropy(stack({{{0.5, 0.6}}})), ValueError);
  CHECK_THROWS_AS(predictive_entropy(stack({{{1.5, -0.5}}})), ValueError);
  CHECK_NOTHROW(predictive_entropy(stack({{{0.5, 0.5 + 5e-7}}})));
  CHECK_THROWS_AS(predictive_entropy(Tensor::zeros({2, 2})), DimensionError);
}

TEST_CASE("disagreement examples") {
  const Disagreement one = max_disagreement(stack({{{0.2, 0.8}, {0.6, 0.4}}}));
  CHECK(one.per_class == Tensor::zeros({2, 2}));
  CHECK(one.per_sample == Tensor::zeros({2}));

  CHECK(max_disagreement(stack({{{0.3, 0.7}}, {{0.3, 0.7}}})).per_sample[0] == 0.0);

  const Disagreement d = max_disagreement(stack({{{0.9, 0.1}}, {{0.5, 0.5}}}));
  CHECK(d.per_class(0, 0) == doctest::Approx(std::abs(0.9 - 0.5)).epsilon(1e-15));
  CHECK(d.per_class(0, 1) == doctest::Approx(std::abs(0.1 - 0.5)).epsilon(1e-15));
  CHECK(d.per_sample[0] == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("variance examples") {
  CHECK(ensemble_variance(stack({{{1.0}}, {{1.0}}})).variance == Tensor::zeros({1, 1}));
  // Unbiased: ((1 − 2)² + (3 − 2)²) / (2 − 1)
  const auto v = ensemble_variance(stack({{{1.0}}, {{3.0}}}));
  CHECK(v.variance(0, 0) == 2.0);
  CHECK_FALSE(v.degenerate);

  const auto single = ensemble_variance(stack({{{4.0, 5.0}}}));
  CHECK(single.degenerate);
  CHECK(single.variance == Tensor::zeros({1, 2}));
}

TEST_CASE("variance matches a two-pass oracle") {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = testing::uniform_int(gen, 2, 8), b = testing::uniform_int(gen, 1, 5),
               k = testing::uniform_int(gen, 1, 4);
    const Tensor s = testing::random_tensor({m, b, k}, gen, 3.0);
    const Tensor v = ensemble_variance(s).variance;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        double mu = 0.0;
        for (std::size_t j = 0; j < m; ++j) mu += s(j, i, c);
        mu /= static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t j = 0; j < m; ++j) ss += (s(j, i, c) - mu) * (s(j, i, c) - mu);
        CHECK(std::abs(v(i, c) - ss / static_cast<double>(m - 1)) <= 1e-12);
      }
  }
}

TEST_CASE("nll examples") {
  // Two members at t ± sqrt(1/2) give mean t and unbiased variance 1.
  const double t = 0.7, h = std::sqrt(0.5);
  const auto r = regression_nll(stack({{{t - h}}, {{t + h}}}), Tensor::matrix({{t}}));
  CHECK(r.mean == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(r.mean == doctest::Approx(0.918939).epsilon(1e-6));

  CHECK_THROWS_AS(regression_nll(stack({{{1.0}}}), Tensor::matrix({{1.0}})), ValueError);
}

TEST_CASE("nll is convex in the log variance with its minimum at the squared error") {
  // Fixed error e = 1: spread the members to set the variance.
  const double err = 1.0;
  std::vector<double> values;
  for (double log_var = -4.0; log_var <= 4.0; log_var += 0.25) {
    const double s = std::sqrt(std::exp(log_var) / 2.0);
    values.push_back(regression_nll(stack({{{-s}}, {{s}}}), Tensor::matrix({{err}})).mean);
  }
  const auto best = std::min_element(values.begin(), values.end()) - values.begin();
  CHECK(best == 16);  // log_var = 0, i.e. σ² = e²
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (static_cast<long>(i) <= best) CHECK(values[i] < values[i - 1]);
    else CHECK(values[i] > values[i - 1]);
  }
}

TEST_CASE("nll agrees with the Gaussian density on a two-member case") {
  const Tensor samples = stack({{{0.2}, {1.5}}, {{0.9}, {1.0}}});
  const Tensor targets = Tensor::matrix({{0.4}, {2.0}});
  const double target_std = 2.5;
  const auto r = regression_nll(samples, targets, target_std);
  const double mus[2] = {0.55, 1.25};
  for (std::size_t i = 0; i < 2; ++i) {
    const double a = samples(0, i, 0), b = samples(1, i, 0);
    const double var = (a - mus[i]) * (a - mus[i]) + (b - mus[i]) * (b - mus[i]);
    // Density in original units: y = σ_y·z, so p(y) = p(z)/σ_y.
    const double sd = std::sqrt(var) * target_std;
    const double y = targets(i, 0) * target_std, mu = mus[i] * target_std;
    const double density = std::exp(-(y - mu) * (y - mu) / (2 * sd * sd)) / (sd * std::sqrt(2 * std::numbers::pi));
    CHECK(r.per_sample[i] == doctest::Approx(-std::log(density)).epsilon(1e-12));
  }
  CHECK(r.mean == doctest::Approx((r.per_sample[0] + r.per_sample[1]) / 2).epsilon(1e-15));
}

TEST_CASE("nll applies the variance floor") {
  const auto r = regression_nll(stack({{{1.0}}, {{1.0}}}), Tensor::matrix({{1.0}}), 1.0, 1e-6);
  CHECK(r.mean == doctest::Approx(0.5 * std::log(2 * std::numbers::pi * 1e-6)).epsilon(1e-12));
}

TEST_CASE("metric bounds and symmetry on random inputs") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 500; ++trial) {
    const auto m = testing::uniform_int(gen, 1, 6), b = testing::uniform_int(gen, 1, 4),
               k = testing::uniform_int(gen, 2, 6);
    const Tensor p = random_probs(m, b, k, gen);
    const Tensor h = predictive_entropy(p);
    const Disagreement d = max_disagreement(p);
    for (std::size_t i = 0; i < b; ++i) {
      CHECK(h[i] >= 0.0);
      CHECK(h[i] <= std::log(static_cast<double>(k)) + 1e-12);
      CHECK(d.per_sample[i] >= 0.0);
      CHECK(d.per_sample[i] <= 1.0);
      CHECK(d.per_sample[i] == doctest::Approx(oracle_md(p, i)).epsilon(1e-15));
    }

    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), gen);
    const Tensor q = permute_members(p, order);
    CHECK(max_abs_diff(predictive_entropy(q), h) <= 1e-12);
    CHECK(max_disagreement(q).per_class == d.per_class);
    if (m >= 2) CHECK(max_abs_diff(ensemble_variance(q).variance, ensemble_variance(p).variance) <= 1e-15);
  }
}

TEST_CASE("disagreement never decreases as members are appended") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = random_probs(6, 3, 4, gen);
    Tensor prev = max_disagreement(p.slice_rows(0, 1)).per_sample;
    for (std::size_t m = 2; m <= 6; ++m) {
      const Tensor cur = max_disagreement(p.slice_rows(0, m)).per_sample;
      for (std::size_t i = 0; i < 3; ++i) CHECK(cur[i] >= prev[i]);
      prev = cur;
    }
  }
}

TEST_CASE("reports and csv export") {
  const Tensor p = stack({{{0.9, 0.1}}, {{0.5, 0.5}}});
  const UncertaintyReport cls = classification_report(p);
  CHECK(cls.classification);
  CHECK(cls.mean_prediction(0, 0) == doctest::Approx(0.7));
  CHECK(cls.max_disagreement[0] == doctest::Approx(0.4));
  std::ostringstream out;
  write_csv(out, cls);
  CHECK(out.str().rfind("sample,mean_0,mean_1,entropy,max_disagreement,variance_0,variance_1\n", 0) == 0);

  const Tensor s = stack({{{1.0}}, {{3.0}}});
  const Tensor t = Tensor::matrix({{2.0}});
  const UncertaintyReport reg = regression_report(s, &t);
  CHECK_FALSE(reg.classification);
  CHECK(reg.nll.has_value());
  CHECK(reg.variance(0, 0) == 2.0);
  std::ostringstream rout;
  write_csv(rout, reg);
  CHECK(rout.str().rfind("sample,mean_0,variance_0,nll\n", 0) == 0);
}

TEST_CASE("histogram") {
  const std::vector<double> v{-1.0, 0.0, 0.1, 0.5, 0.99, 1.0, 3.0};
  const Histogram h = histogram(v, 0.0, 1.0, 4);
  CHECK(h.edges == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(h.counts == std::vector<std::size_t>{3, 0, 1, 3});
  std::ostringstream out;
  write_csv(out, h);
  CHECK(out.str().rfind("bin_lo,bin_hi,count\n0,0.25,3\n", 0) == 0);
}
