#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "tinyde/errors.hpp"
#include "tinyde/layers.hpp"

using namespace tinyde;

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kFdTolerance = 1e-4;
constexpr int kInstances = 100;

NormParams random_norm(std::size_t f, NormKind kind, std::mt19937_64& gen) {
  NormParams p = NormParams::init(f, kind);
  p.gamma = testing::random_tensor({f}, gen);
  p.beta = testing::random_tensor({f}, gen);
  return p;
}

}  // namespace

TEST_CASE("linear forward examples") {
  LinearLayer id{Tensor::identity(3), Tensor::zeros({3})};
  std::mt19937_64 gen(1);
  const Tensor x = testing::random_tensor({4, 3}, gen);
  CHECK(linear_forward(id, x).output == x);

  LinearLayer l{Tensor::matrix({{1, 1}}), Tensor::vector({1})};
  CHECK(linear_forward(l, Tensor::matrix({{2, 3}})).output == Tensor::matrix({{6}}));

  const auto empty = linear_forward(l, Tensor::zeros({0, 2}));
  CHECK(empty.output.shape() == Shape{0, 1});

  CHECK_THROWS_AS(linear_forward(l, Tensor::zeros({1, 3})), DimensionError);
}

TEST_CASE("linear backward examples") {
  std::mt19937_64 gen(2);
  LinearLayer l{testing::random_tensor({3, 4}, gen), testing::random_tensor({3}, gen)};
  const auto fwd = linear_forward(l, testing::random_tensor({5, 4}, gen));

  const auto zero = linear_backward(fwd.cache, Tensor::zeros({5, 3}));
  CHECK(zero.dinput == Tensor::zeros({5, 4}));
  CHECK(zero.dweight == Tensor::zeros({3, 4}));
  CHECK(zero.dbias == Tensor::zeros({3}));

  // d(Σ y)/db = number of rows per output; with one row it is all ones.
  const auto one = linear_forward(l, testing::random_tensor({1, 4}, gen));
  CHECK(linear_backward(one.cache, Tensor::ones({1, 3})).dbias == Tensor::ones({3}));

  CHECK_THROWS_AS(linear_backward(fwd.cache, Tensor::zeros({4, 3})), StateError);
}

TEST_CASE("linear gradients match central differences") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto b = testing::uniform_int(gen, 1, 8), fi = testing::uniform_int(gen, 1, 8),
               fo = testing::uniform_int(gen, 1, 8);
    LinearLayer l{testing::random_tensor({fo, fi}, gen), testing::random_tensor({fo}, gen)};
    const Tensor x = testing::random_tensor({b, fi}, gen);
    const Tensor w = testing::random_tensor({b, fo}, gen);
    const auto g = linear_backward(linear_forward(l, x).cache, w);

    auto by_x = [&](const Tensor& p) { return testing::weighted_sum(linear_forward(l, p).output, w); };
    auto by_w = [&](const Tensor& p) {
      LinearLayer c{p, l.bias};
      return testing::weighted_sum(linear_forward(c, x).output, w);
    };
    auto by_b = [&](const Tensor& p) {
      LinearLayer c{l.weight, p};
      return testing::weighted_sum(linear_forward(c, x).output, w);
    };
    CHECK(testing::relative_error(g.dinput, testing::numeric_gradient(by_x, x, kFdStep)) <= kFdTolerance);
    CHECK(testing::relative_error(g.dweight, testing::numeric_gradient(by_w, l.weight, kFdStep)) <= kFdTolerance);
    CHECK(testing::relative_error(g.dbias, testing::numeric_gradient(by_b, l.bias, kFdStep)) <= kFdTolerance);
  }
}

TEST_CASE("norm forward examples") {
  NormParams p = NormParams::init(3);
  p.eps = 1e-300;
  std::mt19937_64 gen(4);
  const Tensor x = testing::random_tensor({4, 3}, gen);
  CHECK(max_abs_diff(norm_forward(p, x, Mode::eval).output, x) <= 1e-12);

  NormParams q = NormParams::init(1);
  q.eps = 0.0;
  CHECK(norm_forward(q, Tensor::matrix({{1}, {3}}), Mode::train).output == Tensor::matrix({{-1}, {1}}));

  NormParams r = NormParams::init(1);
  r.eps = 0.0;
  r.gamma = Tensor::vector({2});
  r.beta = Tensor::vector({1});
  CHECK(norm_forward(r, Tensor::matrix({{1}, {3}}), Mode::train).output == Tensor::matrix({{-1}, {3}}));
}

TEST_CASE("norm forward agrees with the direct formula and updates running statistics") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto b = testing::uniform_int(gen, 2, 8), f = testing::uniform_int(gen, 1, 8);
    NormParams p = random_norm(f, NormKind::batch, gen);
    const NormParams before = p;
    const Tensor x = testing::random_tensor({b, f}, gen, 3.0);
    const Tensor y = norm_forward(p, x, Mode::train).output;
    CHECK(max_abs_diff(y, testing::reference_batch_norm(x, std::vector<double>(p.gamma.values()),
                                                        std::vector<double>(p.beta.values()), p.eps)) <= 1e-12);
    for (std::size_t j = 0; j < f; ++j) {
      std::vector<double> col(b);
      for (std::size_t i = 0; i < b; ++i) col[i] = x(i, j);
      double mu, var;
      testing::column_moments(col, mu, var);
      CHECK(p.running_mean[j] == doctest::Approx(0.9 * before.running_mean[j] + 0.1 * mu).epsilon(1e-14));
      CHECK(p.running_var[j] == doctest::Approx(0.9 * before.running_var[j] + 0.1 * var).epsilon(1e-14));
    }
  }
}

TEST_CASE("train-mode normalization whitens each feature") {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto b = testing::uniform_int(gen, 2, 8), f = testing::uniform_int(gen, 1, 8);
    NormParams p = NormParams::init(f, NormKind::batch, 1e-12);
    const Tensor x = testing::random_tensor({b, f}, gen, 4.0);
    const Tensor& xhat = norm_forward(p, x, Mode::train).cache.normalized;
    for (std::size_t j = 0; j < f; ++j) {
      std::vector<double> col(b);
      for (std::size_t i = 0; i < b; ++i) col[i] = xhat(i, j);
      double mu, var;
      testing::column_moments(col, mu, var);
      CHECK(std::abs(mu) <= 1e-9);
      CHECK(std::abs(var - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("layer normalization pools the features of each row") {
  NormParams p = NormParams::init(2, NormKind::layer);
  p.eps = 0.0;
  const Tensor y = norm_forward(p, Tensor::matrix({{1, 3}, {10, 20}}), Mode::train).output;
  CHECK(y == Tensor::matrix({{-1, 1}, {-1, 1}}));
  // A single row is fine for the layer variant: its statistics are per row.
  p.eps = kDefaultNormEps;
  CHECK_NOTHROW(norm_forward(p, Tensor::matrix({{1, 2}}), Mode::train));
}

TEST_CASE("single-row batch statistics are rejected") {
  NormParams p = NormParams::init(2);
  CHECK_THROWS_AS(norm_forward(p, Tensor::matrix({{1, 2}}), Mode::train), DegenerateInputError);
  CHECK_NOTHROW(norm_forward(p, Tensor::matrix({{1, 2}}), Mode::eval));
}

TEST_CASE("norm parameter validation") {
  NormParams p = NormParams::init(2);
  p.eps = 0.0;
  CHECK_THROWS_AS(p.validate(), ValueError);
  p = NormParams::init(2);
  p.running_var[0] = -1.0;
  CHECK_THROWS_AS(p.validate(), ValueError);
}

TEST_CASE("norm backward examples") {
  std::mt19937_64 gen(7);
  NormParams p = random_norm(3, NormKind::batch, gen);
  const auto fwd = norm_forward(p, testing::random_tensor({4, 3}, gen), Mode::train);
  const auto zero = norm_backward(fwd.cache, Tensor::zeros({4, 3}));
  CHECK(zero.dinput == Tensor::zeros({4, 3}));
  CHECK(zero.dgamma == Tensor::zeros({3}));
  CHECK(zero.dbeta == Tensor::zeros({3}));

  const Tensor dy = testing::random_tensor({4, 3}, gen);
  const Tensor dbeta = norm_backward(fwd.cache, dy).dbeta;
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += dy(i, j);
    CHECK(dbeta[j] == doctest::Approx(s).epsilon(1e-15));
  }
  CHECK_THROWS_AS(norm_backward(fwd.cache, Tensor::zeros({3, 3})), StateError);
}

TEST_CASE("norm gradients match central differences") {
  std::mt19937_64 gen(8);
  for (NormKind kind : {NormKind::batch, NormKind::layer}) {
    for (Mode mode : {Mode::train, Mode::eval}) {
      for (int trial = 0; trial < kInstances; ++trial) {
        const auto b = testing::uniform_int(gen, 2, 8), f = testing::uniform_int(gen, 2, 8);
        NormParams p = random_norm(f, kind, gen);
        if (kind == NormKind::batch && mode == Mode::eval) {
          p.running_mean = testing::random_tensor({f}, gen);
          p.running_var = map(testing::random_tensor({f}, gen), UnaryFn::abs);
        }
        const Tensor x = testing::random_tensor({b, f}, gen);
        const Tensor w = testing::random_tensor({b, f}, gen);
        NormParams work = p;
        const auto g = norm_backward(norm_forward(work, x, mode).cache, w);

        auto eval = [&](const NormParams& q, const Tensor& in) {
          NormParams c = q;  // train mode touches running statistics
          return testing::weighted_sum(norm_forward(c, in, mode).output, w);
        };
        auto by_x = [&](const Tensor& t) { return eval(p, t); };
        auto by_g = [&](const Tensor& t) {
          NormParams c = p;
          c.gamma = t;
          return eval(c, x);
        };
        auto by_b = [&](const Tensor& t) {
          NormParams c = p;
          c.beta = t;
          return eval(c, x);
        };
        CAPTURE(trial);
        CHECK(testing::relative_error(g.dinput, testing::numeric_gradient(by_x, x, kFdStep)) <= kFdTolerance);
        CHECK(testing::relative_error(g.dgamma, testing::numeric_gradient(by_g, p.gamma, kFdStep)) <= kFdTolerance);
        CHECK(testing::relative_error(g.dbeta, testing::numeric_gradient(by_b, p.beta, kFdStep)) <= kFdTolerance);
      }
    }
  }
}

TEST_CASE("ensemblenorm forward example") {
  EnsembleNormParams p = EnsembleNormParams::init(2, 1);
  p.eps = 0.0;
  p.gamma = Tensor::matrix({{1}, {0}});
  p.beta = Tensor::matrix({{0}, {7}});
  const Tensor x = Tensor::matrix({{1}, {3}, {1}, {3}});
  CHECK(ensemblenorm_forward(p, x, Mode::train).output == Tensor::matrix({{-1}, {1}, {7}, {7}}));
  CHECK_THROWS_AS(ensemblenorm_forward(p, Tensor::zeros({3, 1}), Mode::train), DimensionError);
}

TEST_CASE("ensemblenorm with one member is plain normalization") {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto b = testing::uniform_int(gen, 2, 8), f = testing::uniform_int(gen, 1, 8);
    NormParams single = random_norm(f, NormKind::batch, gen);
    EnsembleNormParams stacked = EnsembleNormParams::from_members({single});
    const Tensor x = testing::random_tensor({b, f}, gen);
    CHECK(ensemblenorm_forward(stacked, x, Mode::train).output == norm_forward(single, x, Mode::train).output);
    CHECK(stacked.member(0) == single);
  }
}

TEST_CASE("ensemblenorm on tiled input matches per-member normalization") {
  std::mt19937_64 gen(10);
  for (Mode mode : {Mode::train, Mode::eval}) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto m = testing::uniform_int(gen, 1, 5), b = testing::uniform_int(gen, 2, 6),
                 f = testing::uniform_int(gen, 1, 6);
      std::vector<NormParams> members;
      for (std::size_t k = 0; k < m; ++k) {
        NormParams q = random_norm(f, NormKind::batch, gen);
        q.running_mean = testing::random_tensor({f}, gen);
        q.running_var = map(testing::random_tensor({f}, gen), UnaryFn::abs);
        members.push_back(q);
      }
      EnsembleNormParams stacked = EnsembleNormParams::from_members(members);
      const Tensor x = testing::random_tensor({b, f}, gen);
      const Tensor y = ensemblenorm_forward(stacked, tile_rows(x, m), mode).output;
      for (std::size_t k = 0; k < m; ++k) {
        const Tensor ref = norm_forward(members[k], x, mode).output;
        CHECK(max_abs_diff(y.slice_rows(k * b, (k + 1) * b), ref) <= 1e-12);
        if (mode == Mode::train) CHECK(stacked.member(k) == members[k]);
      }
    }
  }
}

TEST_CASE("identical member parameters on identical tiles give identical outputs") {
  std::mt19937_64 gen(11);
  NormParams q = random_norm(3, NormKind::batch, gen);
  EnsembleNormParams stacked = EnsembleNormParams::from_members({q, q, q});
  const Tensor y = ensemblenorm_forward(stacked, tile_rows(testing::random_tensor({4, 3}, gen), 3), Mode::train).output;
  CHECK(y.slice_rows(0, 4) == y.slice_rows(4, 8));
  CHECK(y.slice_rows(0, 4) == y.slice_rows(8, 12));
}

TEST_CASE("ensemblenorm backward keeps members independent") {
  std::mt19937_64 gen(12);
  const std::size_t m = 3, b = 4, f = 2;
  std::vector<NormParams> members;
  for (std::size_t k = 0; k < m; ++k) members.push_back(random_norm(f, NormKind::batch, gen));
  const EnsembleNormParams base = EnsembleNormParams::from_members(members);
  const Tensor x = testing::random_tensor({m * b, f}, gen);
  const Tensor dy = testing::random_tensor({m * b, f}, gen);

  EnsembleNormParams p1 = base;
  const auto g1 = ensemblenorm_backward(ensemblenorm_forward(p1, x, Mode::train).cache, dy);
  CHECK(g1.dgamma.shape() == Shape{m, f});

  Tensor x2 = x;
  for (std::size_t i = b; i < 2 * b; ++i) x2(i, 0) += 0.5 * static_cast<double>(i);
  EnsembleNormParams p2 = base;
  const auto g2 = ensemblenorm_backward(ensemblenorm_forward(p2, x2, Mode::train).cache, dy);
  for (std::size_t k : {std::size_t{0}, std::size_t{2}})
    for (std::size_t j = 0; j < f; ++j) {
      CHECK(g1.dgamma(k, j) == g2.dgamma(k, j));
      CHECK(g1.dbeta(k, j) == g2.dbeta(k, j));
    }

  const auto zero = ensemblenorm_backward(ensemblenorm_forward(p1, x, Mode::train).cache, Tensor::zeros({m * b, f}));
  CHECK(zero.dinput == Tensor::zeros({m * b, f}));
  CHECK(zero.dgamma == Tensor::zeros({m, f}));
}

TEST_CASE("ensemblenorm gradients match central differences") {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto m = testing::uniform_int(gen, 1, 4), b = testing::uniform_int(gen, 2, 6),
               f = testing::uniform_int(gen, 1, 6);
    std::vector<NormParams> members;
    for (std::size_t k = 0; k < m; ++k) members.push_back(random_norm(f, NormKind::batch, gen));
    const EnsembleNormParams p = EnsembleNormParams::from_members(members);
    const Tensor x = testing::random_tensor({m * b, f}, gen);
    const Tensor w = testing::random_tensor({m * b, f}, gen);
    EnsembleNormParams work = p;
    const auto g = ensemblenorm_backward(ensemblenorm_forward(work, x, Mode::train).cache, w);

    auto eval = [&](const EnsembleNormParams& q, const Tensor& in) {
      EnsembleNormParams c = q;
      return testing::weighted_sum(ensemblenorm_forward(c, in, Mode::train).output, w);
    };
    auto by_x = [&](const Tensor& t) { return eval(p, t); };
    auto by_g = [&](const Tensor& t) {
      EnsembleNormParams c = p;
      c.gamma = t;
      return eval(c, x);
    };
    auto by_b = [&](const Tensor& t) {
      EnsembleNormParams c = p;
      c.beta = t;
      return eval(c, x);
    };
    CHECK(testing::relative_error(g.dinput, testing::numeric_gradient(by_x, x, kFdStep)) <= kFdTolerance);
    CHECK(testing::relative_error(g.dgamma, testing::numeric_gradient(by_g, p.gamma, kFdStep)) <= kFdTolerance);
    CHECK(testing::relative_error(g.dbeta, testing::numeric_gradient(by_b, p.beta, kFdStep)) <= kFdTolerance);
  }
}

TEST_CASE("stacked parameters round-trip through members") {
  std::mt19937_64 gen(14);
  std::vector<NormParams> members;
  for (int k = 0; k < 4; ++k) members.push_back(random_norm(5, NormKind::batch, gen));
  const EnsembleNormParams stacked = EnsembleNormParams::from_members(members);
  CHECK(stacked.unstack() == members);
  EnsembleNormParams edited = stacked;
  edited.set_member(2, members[0]);
  CHECK(edited.member(2) == members[0]);
  CHECK(edited.member(1) == members[1]);
}

TEST_CASE("relu6 examples") {
  const auto fwd = relu6_forward(Tensor::vector({-1, 3, 9}));
  CHECK(fwd.output == Tensor::vector({0, 3, 6}));
  CHECK(relu6_backward(fwd.cache, Tensor::vector({1, 1, 1})) == Tensor::vector({0, 1, 0}));
  // Subgradient 0 at both kinks.
  const auto kinks = relu6_forward(Tensor::vector({0, 6}));
  CHECK(relu6_backward(kinks.cache, Tensor::vector({1, 1})) == Tensor::vector({0, 0}));
}

TEST_CASE("relu6 gradient matches central differences away from the kinks") {
  std::mt19937_64 gen(15);
  std::uniform_real_distribution<double> u(-3.0, 9.0);
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto b = testing::uniform_int(gen, 1, 8), f = testing::uniform_int(gen, 1, 8);
    Tensor x({b, f});
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v;
      do v = u(gen);
      while (std::abs(v) < 1e-3 || std::abs(v - 6.0) < 1e-3);
      x[i] = v;
    }
    const Tensor w = testing::random_tensor({b, f}, gen);
    const Tensor g = relu6_backward(relu6_forward(x).cache, w);
    auto fn = [&](const Tensor& t) { return testing::weighted_sum(relu6_forward(t).output, w); };
    CHECK(testing::relative_error(g, testing::numeric_gradient(fn, x, kFdStep)) <= 1e-6);
  }
}
