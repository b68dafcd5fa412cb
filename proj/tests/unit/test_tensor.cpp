#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "tinyde/errors.hpp"
#include "tinyde/tensor.hpp"

using namespace tinyde;

TEST_CASE("matmul examples") {
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  CHECK(matmul(Tensor::identity(2), b) == b);

  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor col = Tensor::matrix({{5}, {6}});
  CHECK(matmul(a, col) == testing::naive_matmul(a, col));
  CHECK(matmul(a, col) == Tensor::matrix({{17}, {39}}));

  std::mt19937_64 gen(1);
  const Tensor any = testing::random_tensor({3, 4}, gen);
  CHECK(matmul(Tensor::zeros({2, 3}), any) == Tensor::zeros({2, 4}));
}

TEST_CASE("matmul rejects mismatched inner extents and names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with the triple-loop oracle on random shapes") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = testing::uniform_int(gen, 1, 6), k = testing::uniform_int(gen, 1, 6),
               c = testing::uniform_int(gen, 1, 6);
    const Tensor a = testing::random_tensor({r, k}, gen), b = testing::random_tensor({k, c}, gen);
    CHECK(max_abs_diff(matmul(a, b), testing::naive_matmul(a, b)) <= 1e-12);
    CHECK(max_abs_diff(matmul_transposed(a, transpose(b)), testing::naive_matmul(a, b)) <= 1e-12);
    CHECK(max_abs_diff(transposed_matmul(transpose(a), b), testing::naive_matmul(a, b)) <= 1e-12);
  }
}

TEST_CASE("matmul is associative within 1e-9 on bounded entries") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto bounded = [&](Shape s) {
    Tensor t(std::move(s));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(gen);
    return t;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const auto n1 = testing::uniform_int(gen, 1, 8), n2 = testing::uniform_int(gen, 1, 8),
               n3 = testing::uniform_int(gen, 1, 8), n4 = testing::uniform_int(gen, 1, 8);
    const Tensor a = bounded({n1, n2}), b = bounded({n2, n3}), c = bounded({n3, n4});
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-9);
  }
}

TEST_CASE("reduce examples") {
  CHECK(reduce(Tensor::vector({1, 2, 3}), {0}, ReduceKind::mean)[0] == 2.0);
  // (1 − 2)² + (3 − 2)² over 2 values
  CHECK(reduce(Tensor::vector({1, 3}), {0}, ReduceKind::variance)[0] == 1.0);
  CHECK(reduce(Tensor::matrix({{0.1, 0.9}, {0.4, 0.2}}), {1}, ReduceKind::max) == Tensor::vector({0.9, 0.4}));
  CHECK(reduce(Tensor::matrix({{1, 2}, {3, 4}}), {0, 1}, ReduceKind::sum).values() == std::vector<double>{10.0});
}

TEST_CASE("reduce removes exactly the reduced axes") {
  const Tensor t({2, 3, 4}, 1.0);
  CHECK(reduce(t, {1}, ReduceKind::sum).shape() == Shape{2, 4});
  CHECK(reduce(t, {0, 2}, ReduceKind::mean).shape() == Shape{3});
}

TEST_CASE("reduce errors") {
  CHECK_THROWS_AS(reduce(Tensor::zeros({0, 3}), {0}, ReduceKind::mean), DegenerateInputError);
  CHECK_THROWS_AS(reduce(Tensor::zeros({2, 3}), {2}, ReduceKind::mean), DimensionError);
  CHECK_THROWS_AS(reduce(Tensor::zeros({2, 3}), {0, 0}, ReduceKind::mean), DimensionError);
}

TEST_CASE("centering with the reduced mean leaves a zero mean") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = testing::uniform_int(gen, 1, 9), c = testing::uniform_int(gen, 1, 9);
    const Tensor x = testing::random_tensor({r, c}, gen, 5.0);
    const Tensor mu = reduce(x, {0}, ReduceKind::mean).reshape({1, c});
    const Tensor centered = zip(x, mu, BinaryOp::sub);
    const Tensor m = reduce(centered, {0}, ReduceKind::mean);
    for (std::size_t j = 0; j < c; ++j) CHECK(std::abs(m[j]) <= 1e-12);
  }
}

TEST_CASE("map and zip examples") {
  CHECK(zip(Tensor::vector({0.9, 0.1}), Tensor::vector({0.5, 0.5}), BinaryOp::absdiff).values()[0] ==
        doctest::Approx(0.4).epsilon(1e-15));
  CHECK(zip(Tensor::vector({0.9, 0.1}), Tensor::vector({0.5, 0.5}), BinaryOp::absdiff).values()[1] ==
        doctest::Approx(0.4).epsilon(1e-15));

  std::mt19937_64 gen(5);
  const Tensor x = testing::random_tensor({3, 4}, gen);
  CHECK(zip(x, Tensor::zeros(x.shape()), BinaryOp::add) == x);

  const Tensor col = Tensor::matrix({{3}, {5}});
  const Tensor row = Tensor::matrix({{10, 100}});
  CHECK(zip(col, row, BinaryOp::mul) == Tensor::matrix({{30, 300}, {50, 500}}));

  CHECK(map(Tensor::vector({-1, 3, 9}), UnaryFn::relu6) == Tensor::vector({0, 3, 6}));
}

TEST_CASE("zip broadcasting follows a per-element loop oracle") {
  const Tensor a({2, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Tensor b({4, 1}, std::vector<double>{10, 20, 30, 40});
  const Tensor out = zip(a, b, BinaryOp::add);
  REQUIRE(out.shape() == Shape{2, 4, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 3; ++k) CHECK(out(i, j, k) == a(i, 0, k) + b(j, 0));
}

TEST_CASE("zip rejects incompatible shapes") {
  CHECK_THROWS_AS(zip(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}), BinaryOp::add), DimensionError);
}

TEST_CASE("reshape keeps data and round-trips") {
  std::mt19937_64 gen(9);
  const Tensor x = testing::random_tensor({2, 3, 4}, gen);
  const Tensor y = x.reshape({6, 4});
  CHECK(y.values() == x.values());
  CHECK(y.reshape({2, 3, 4}) == x);
  CHECK_THROWS_AS(x.reshape({5, 5}), DimensionError);
}

TEST_CASE("constructor rejects a data length that disagrees with the shape") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("row helpers") {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  CHECK(x.slice_rows(1, 3) == Tensor::matrix({{3, 4}, {5, 6}}));
  CHECK(tile_rows(x.slice_rows(0, 1), 2) == Tensor::matrix({{1, 2}, {1, 2}}));
  const std::vector<std::size_t> idx{2, 0};
  CHECK(gather_rows(x, idx) == Tensor::matrix({{5, 6}, {1, 2}}));
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(gather_rows(x, bad), IndexError);
  CHECK(concat_rows({x.slice_rows(0, 1), x.slice_rows(1, 3)}) == x);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  const Tensor p = softmax_last(Tensor::matrix({{1000, 1000}, {0, std::log(3.0)}}));
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 1) == doctest::Approx(0.75));
}
