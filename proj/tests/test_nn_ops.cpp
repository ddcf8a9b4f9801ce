#include <cmath>

#include "awconv/nn_ops.hpp"
#include "awconv/oracles.hpp"
#include "awconv/rng.hpp"
#include "doctest.h"

using namespace awconv;

namespace {

Tensor<double> randn(Rng& rng, Shape shape) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("conv2d identity kernel and all-ones kernel") {
  Tensor<double> x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> k1({1, 1, 1, 1}, {1.0});
  CHECK(bitwise_equal(nn::conv2d<double>(x, k1, nullptr, 1, 0, 1), x));

  Tensor<double> ones = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> k3 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> out = nn::conv2d<double>(ones, k3, nullptr, 1, 1, 1);
  const double want[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (int64_t i = 0; i < 9; ++i) CHECK(out[i] == want[i]);
}

TEST_CASE("conv2d matches the reference on random instances") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = rng.uniform_int(1, 2), c1 = rng.uniform_int(1, 3),
                  c2 = rng.uniform_int(1, 3);
    const int64_t h = rng.uniform_int(3, 6), w = rng.uniform_int(3, 6);
    Tensor<double> x = randn(rng, {n, c1, h, w});
    Tensor<double> k = randn(rng, {c2, c1, 3, 3});
    CHECK(max_abs_diff(nn::conv2d<double>(x, k, nullptr, 1, 1, 1),
                       oracles::reference_conv(x, k, 1, 1)) < 1e-10);
  }
}

TEST_CASE("grouped conv equals per-group references") {
  Rng rng(22);
  Tensor<double> x = randn(rng, {2, 4, 5, 5});
  Tensor<double> k = randn(rng, {6, 2, 3, 3});  // groups=2: 2 in-ch, 3 out-ch per group
  Tensor<double> out = nn::conv2d<double>(x, k, nullptr, 1, 1, 2);
  for (int64_t g = 0; g < 2; ++g) {
    Tensor<double> xg({2, 2, 5, 5});
    for (int64_t l = 0; l < 2; ++l)
      for (int64_t c = 0; c < 2; ++c)
        for (int64_t i = 0; i < 25; ++i)
          xg[(l * 2 + c) * 25 + i] = x[(l * 4 + g * 2 + c) * 25 + i];
    Tensor<double> kg({3, 2, 3, 3});
    for (int64_t i = 0; i < kg.numel(); ++i) kg[i] = k[g * kg.numel() + i];
    Tensor<double> ref = oracles::reference_conv(xg, kg, 1, 1);
    for (int64_t l = 0; l < 2; ++l)
      for (int64_t p = 0; p < 3; ++p)
        for (int64_t i = 0; i < 25; ++i) {
          CHECK(out[(l * 6 + g * 3 + p) * 25 + i] ==
                doctest::Approx(ref[(l * 3 + p) * 25 + i]).epsilon(1e-12));
        }
  }
}

TEST_CASE("conv2d shape errors") {
  Tensor<double> x({1, 3, 4, 4});
  Tensor<double> k({2, 4, 3, 3});
  CHECK_THROWS_AS(nn::conv2d<double>(x, k, nullptr, 1, 1, 1), ShapeError);
  Tensor<double> kg({3, 3, 1, 1});
  CHECK_THROWS_AS(nn::conv2d<double>(x, kg, nullptr, 1, 0, 2), ShapeError);  // 3 % 2 != 0
}

TEST_CASE("pointwise_conv") {
  Rng rng(23);
  Tensor<double> x = randn(rng, {2, 2, 3, 3});

  Tensor<double> eye({2, 2, 1, 1}, {1, 0, 0, 1});
  CHECK(bitwise_equal(nn::pointwise_conv(x, eye), x));

  Tensor<double> sum_k({1, 2, 1, 1}, {1, 1});
  Tensor<double> s = nn::pointwise_conv(x, sum_k);
  for (int64_t l = 0; l < 2; ++l)
    for (int64_t i = 0; i < 9; ++i) {
      CHECK(s[l * 9 + i] == doctest::Approx(x[(l * 2 + 0) * 9 + i] + x[(l * 2 + 1) * 9 + i]));
    }

  Tensor<double> w = randn(rng, {3, 2, 1, 1});
  CHECK(max_abs_diff(nn::pointwise_conv(x, w), nn::conv2d<double>(x, w, nullptr, 1, 0, 1)) == 0);
  Tensor<double> bad({3, 2, 3, 3});
  CHECK_THROWS_AS(nn::pointwise_conv(x, bad), ShapeError);
}

TEST_CASE("adaptive_avgpool2d bins") {
  Tensor<double> x({1, 1, 2, 2}, {1, 3, 5, 7});
  Tensor<double> p = nn::adaptive_avgpool2d(x, 1, 1);
  CHECK(p[0] == 4);

  CHECK(bitwise_equal(nn::adaptive_avgpool2d(x, 2, 2), x));

  // H=4 -> 3 bins: rows {0,1}, {1,2}, {2,3}.
  Tensor<double> col({1, 1, 4, 1}, {0, 10, 20, 30});
  Tensor<double> b = nn::adaptive_avgpool2d(col, 3, 1);
  CHECK(b[0] == 5);
  CHECK(b[1] == 15);
  CHECK(b[2] == 25);

  Tensor<double> ones = Tensor<double>::full({2, 3, 5, 7}, 1.0);
  Tensor<double> pooled = nn::adaptive_avgpool2d(ones, 3, 3);
  for (int64_t i = 0; i < pooled.numel(); ++i) CHECK(pooled[i] == 1.0);
}

TEST_CASE("batchnorm2d modes") {
  // Constant channel in training mode collapses to beta.
  Tensor<double> x = Tensor<double>::full({2, 1, 2, 2}, 5.0);
  Tensor<double> gamma = Tensor<double>::full({1}, 1.0);
  Tensor<double> beta({1}, {0.25});
  Tensor<double> rm({1}), rv = Tensor<double>::full({1}, 1.0);
  Tensor<double> y = nn::batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.25));
  CHECK(rm[0] == doctest::Approx(0.5));  // 0.9*0 + 0.1*5

  // Eval mode with rm=0, rv=1 is the affine map.
  Tensor<double> x2({1, 1, 1, 2}, {2, -2});
  Tensor<double> gamma2({1}, {3.0});
  Tensor<double> beta2({1}, {1.0});
  Tensor<double> rm2({1}), rv2 = Tensor<double>::full({1}, 1.0);
  Tensor<double> y2 = nn::batchnorm2d(x2, gamma2, beta2, rm2, rv2, false, 0.1, 0.0);
  CHECK(y2[0] == doctest::Approx(7.0));
  CHECK(y2[1] == doctest::Approx(-5.0));

  // Training output is standardized per channel (pre-affine).
  Rng rng(24);
  Tensor<double> x3 = randn(rng, {4, 3, 5, 5});
  Tensor<double> g3 = Tensor<double>::full({3}, 1.0);
  Tensor<double> b3 = Tensor<double>::zeros({3});
  Tensor<double> rm3({3}), rv3 = Tensor<double>::full({3}, 1.0);
  Tensor<double> y3 = nn::batchnorm2d(x3, g3, b3, rm3, rv3, true, 0.1, 1e-12);
  const int64_t m = 4 * 25;
  for (int64_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (int64_t l = 0; l < 4; ++l)
      for (int64_t i = 0; i < 25; ++i) {
        const double v = y3[(l * 3 + c) * 25 + i];
        sum += v;
        sq += v * v;
      }
    CHECK(std::abs(sum / m) < 1e-5);
    CHECK(std::abs(sq / m - 1.0) < 1e-5);
  }
}

TEST_CASE("activations") {
  Tensor<double> x({4}, {-1, 2, 0, -0.5});
  Tensor<double> r = nn::relu(x);
  CHECK(r[0] == 0);
  CHECK(r[1] == 2);
  CHECK(r[2] == 0);

  Tensor<double> s0 = nn::sigmoid(Tensor<double>({1}, {0.0}));
  CHECK(s0[0] == 0.5);
  Tensor<double> extreme({4}, {-1000, -30, 30, 1000});
  Tensor<double> s = nn::sigmoid(extreme);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(s[i] >= 0.0);
    CHECK(s[i] <= 1.0);
    CHECK(std::isfinite(s[i]));
  }
  Tensor<float> sf = nn::sigmoid(extreme.cast<float>());
  for (int64_t i = 0; i < 4; ++i) CHECK(std::isfinite(sf[i]));
}

TEST_CASE("maxpool2d and global pools") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> p = nn::maxpool2d(x, 2, 2, 0, nullptr);
  CHECK(p.numel() == 1);
  CHECK(p[0] == 4);

  Tensor<double> g({1, 2, 2, 2}, {1, 5, 2, 3, -1, -7, -2, -4});
  Tensor<double> gm = nn::global_maxpool(g, nullptr);
  CHECK(gm.at({0, 0, 0, 0}) == 5);
  CHECK(gm.at({0, 1, 0, 0}) == -1);

  CHECK_THROWS_AS(nn::maxpool2d(x, 2, 1, 2, nullptr), ShapeError);  // padding >= kernel
}

TEST_CASE("linear") {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> zero({3});
  CHECK(bitwise_equal(nn::linear(x, eye, &zero), x));

  Tensor<double> w({2, 3}, {1, 1, 1, 0, 0, 1});
  Tensor<double> b({2}, {10, 20});
  Tensor<double> y = nn::linear(x, w, &b);
  CHECK(y.at({0, 0}) == 16);
  CHECK(y.at({0, 1}) == 23);
  CHECK(y.at({1, 0}) == 25);
  CHECK(y.at({1, 1}) == 26);
}

TEST_CASE("softmax cross entropy") {
  Tensor<double> uniform = Tensor<double>::zeros({3, 4});
  const double loss = nn::cross_entropy_value(uniform, {0, 1, 2});
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  CHECK_THROWS_AS(nn::cross_entropy_value(uniform, {0, 1, 4}), UsageError);
  CHECK_THROWS_AS(nn::cross_entropy_value(uniform, {0, 1}), ShapeError);

  // Softmax rows are distributions.
  Rng rng(25);
  Tensor<double> logits = randn(rng, {2, 5});
  Tensor<double> p = nn::softmax(logits);
  for (int64_t l = 0; l < 2; ++l) {
    double sum = 0;
    for (int64_t j = 0; j < 5; ++j) {
      CHECK(p[l * 5 + j] > 0);
      sum += p[l * 5 + j];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}
