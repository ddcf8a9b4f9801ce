#include <vector>

#include "awconv/rng.hpp"
#include "awconv/tensor.hpp"
#include "doctest.h"

using namespace awconv;

TEST_CASE("hadamard element-wise and broadcast") {
  Tensor<double> a({3}, {1, 2, 3});
  Tensor<double> sq = hadamard(a, a);
  CHECK(sq[0] == 1);
  CHECK(sq[1] == 4);
  CHECK(sq[2] == 9);

  Tensor<double> col({2, 1}, {5, 7});
  Tensor<double> row({1, 3}, {1, 2, 3});
  Tensor<double> outer = hadamard(col, row);
  REQUIRE(outer.shape() == Shape{2, 3});
  const std::vector<double> want{5, 10, 15, 7, 14, 21};
  for (int64_t i = 0; i < 6; ++i) CHECK(outer[i] == want[static_cast<size_t>(i)]);

  Tensor<double> z = Tensor<double>::zeros({2, 3});
  CHECK(bitwise_equal(hadamard(outer, z), z));

  Tensor<double> bad({2, 2});
  CHECK_THROWS_AS(hadamard(outer, bad), ShapeError);
}

TEST_CASE("reshape keeps row-major order") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b = a.reshape({3, 2});
  REQUIRE(b.shape() == Shape{3, 2});
  CHECK(b.at({0, 0}) == 1);
  CHECK(b.at({0, 1}) == 2);
  CHECK(b.at({1, 0}) == 3);
  CHECK(b.at({2, 1}) == 6);

  Tensor<double> v({4}, {9, 8, 7, 6});
  CHECK(bitwise_equal(v.reshape({1, 4}).reshape({4}), v));

  Tensor<double> big({1, 4, 3, 3});
  for (int64_t i = 0; i < big.numel(); ++i) big[i] = static_cast<double>(i);
  Tensor<double> r = big.reshape({1, 2, 2, 3, 3});
  for (int64_t i = 0; i < big.numel(); ++i) CHECK(r[i] == static_cast<double>(i));

  CHECK_THROWS_AS(a.reshape({4, 2}), ShapeError);
}

TEST_CASE("unsqueeze and expand") {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  CHECK(a.unsqueeze(1).shape() == Shape{2, 1, 2});
  CHECK_THROWS_AS(a.unsqueeze(3), ShapeError);

  Tensor<double> col({2, 1}, {3, 4});
  Tensor<double> e = col.expand({2, 3});
  const std::vector<double> want{3, 3, 3, 4, 4, 4};
  for (int64_t i = 0; i < 6; ++i) CHECK(e[i] == want[static_cast<size_t>(i)]);
  CHECK_THROWS_AS(col.expand({3, 3}), ShapeError);

  // Per-channel scalars replicated r times along a fresh axis.
  Tensor<double> chan({3}, {1, 2, 3});
  Tensor<double> rep = chan.unsqueeze(1).expand({3, 4});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t r = 0; r < 4; ++r) CHECK(rep.at({c, r}) == chan[c]);
}

TEST_CASE("reductions and arithmetic") {
  Tensor<double> m({2, 2}, {1, 3, 5, 7});
  Tensor<double> mean = reduce_mean(m, {0, 1});
  CHECK(mean.numel() == 1);
  CHECK(mean[0] == 4);

  Tensor<double> x({2, 2}, {1, -2, 3, -4});
  CHECK(bitwise_equal(add(x, Tensor<double>::zeros({2, 2})), x));
  CHECK(bitwise_equal(scale(x, 1.0), x));
  CHECK(sub(x, x)[2] == 0);

  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> tt = t.transpose2d();
  CHECK(tt.shape() == Shape{3, 2});
  CHECK(tt.at({2, 1}) == 6);

  Tensor<double> f({2});
  fill(f, 2.5);
  CHECK(f[1] == 2.5);
}

TEST_CASE("reduce_to_shape sums broadcast axes") {
  Tensor<double> g({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> r = reduce_to_shape(g, {1, 3});
  CHECK(r[0] == 5);
  CHECK(r[1] == 7);
  CHECK(r[2] == 9);
  Tensor<double> s = reduce_to_shape(g, {3});
  CHECK(s.shape() == Shape{3});
  CHECK(s[2] == 9);
}

TEST_CASE("reshape round-trip is bit-exact on random tensors") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t a = rng.uniform_int(1, 4), b = rng.uniform_int(1, 4),
                  c = rng.uniform_int(1, 4);
    Tensor<float> t({a, b, c});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
    CHECK(bitwise_equal(t.reshape({a * b * c}).reshape({a, b, c}), t));
    CHECK(bitwise_equal(t.reshape({c * b * a}).reshape({a, b, c}), t));
  }
}

TEST_CASE("hadamard commutes and associates on integer tensors") {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor<double> a({2, 3}), b({2, 3}), c({2, 3});
    for (int64_t i = 0; i < a.numel(); ++i) {
      a[i] = static_cast<double>(rng.uniform_int(-4, 4));
      b[i] = static_cast<double>(rng.uniform_int(-4, 4));
      c[i] = static_cast<double>(rng.uniform_int(-4, 4));
    }
    CHECK(bitwise_equal(hadamard(a, b), hadamard(b, a)));
    CHECK(bitwise_equal(hadamard(hadamard(a, b), c), hadamard(a, hadamard(b, c))));
  }
}

TEST_CASE("expand then mean-reduce recovers the source exactly") {
  Rng rng(13);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t r = rng.uniform_int(1, 5);
    Tensor<double> src({3, 1, 2});
    for (int64_t i = 0; i < src.numel(); ++i) {
      src[i] = static_cast<double>(rng.uniform_int(-4, 4));
    }
    Tensor<double> expanded = src.expand({3, r, 2});
    CHECK(bitwise_equal(reduce_mean(expanded, {1}), src));
  }
}

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(Tensor<double>(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2}, {1, 2, 3}), ShapeError);
  CHECK(broadcast_shape({2, 1}, {1, 3}) == Shape{2, 3});
  CHECK(broadcast_shape({4}, {2, 1, 4}) == Shape{2, 1, 4});
  CHECK_THROWS_AS(broadcast_shape({2, 3}, {2, 2}), ShapeError);
}
