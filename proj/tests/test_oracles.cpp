#include "awconv/aw_conv.hpp"
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

TEST_CASE("reference_conv identity and hand-summed all-ones case") {
  Tensor<double> x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> k1({1, 1, 1, 1}, {1.0});
  CHECK(bitwise_equal(oracles::reference_conv(x, k1, 1, 0), x));

  Tensor<double> ones = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> k3 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> out = oracles::reference_conv(ones, k3, 1, 1);
  // Valid taps: corners 4, edge centers 6, center 9.
  const double want[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (int64_t i = 0; i < 9; ++i) CHECK(out[i] == want[i]);
}

TEST_CASE("attend_activations_then_conv with neutral and zero maps") {
  Rng rng(5);
  Tensor<double> x = randn(rng, {2, 3, 5, 5});
  Tensor<double> k = randn(rng, {2, 3, 3, 3});
  Tensor<double> ref = oracles::reference_conv(x, k, 1, 1);

  Tensor<double> ones_shared = Tensor<double>::full({2, 3, 3, 3}, 1.0);
  CHECK(max_abs_diff(oracles::attend_activations_then_conv(x, ones_shared, k, 1, 1), ref) == 0);

  Tensor<double> zeros_full = Tensor<double>::zeros({2, 2, 3, 3, 3});
  Tensor<double> out = oracles::attend_activations_then_conv(x, zeros_full, k, 1, 1);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0);
}

TEST_CASE("weight-shaped attention equals attending the weights") {
  Rng rng(6);
  Tensor<double> x = randn(rng, {2, 3, 4, 4});
  Tensor<double> k = randn(rng, {2, 3, 3, 3});
  Tensor<double> maps = randn(rng, {2, 2, 3, 3, 3});
  Tensor<double> lhs = oracles::attend_activations_then_conv(x, maps, k, 1, 1);
  Tensor<double> rhs = aw_conv2d(x, hadamard(maps, k), 1, 1);
  CHECK(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("channel-pair attention") {
  Rng rng(7);
  Tensor<double> x = randn(rng, {1, 2, 4, 4});
  Tensor<double> k = randn(rng, {2, 2, 3, 3});
  Tensor<double> ref = oracles::reference_conv(x, k, 1, 1);

  Tensor<double> ones = Tensor<double>::full({1, 2, 2, 1, 1}, 1.0);
  CHECK(max_abs_diff(oracles::channel_pair_attention_conv(x, ones, k, 1, 1), ref) == 0);

  // Gate output channel 0 fully on and channel 1 fully off.
  Tensor<double> gate = Tensor<double>::zeros({1, 2, 2, 1, 1});
  gate.at({0, 0, 0, 0, 0}) = 1.0;
  gate.at({0, 0, 1, 0, 0}) = 1.0;
  Tensor<double> out = oracles::channel_pair_attention_conv(x, gate, k, 1, 1);
  for (int64_t m = 0; m < 4; ++m)
    for (int64_t n = 0; n < 4; ++n) {
      CHECK(out.at({0, 0, m, n}) == ref.at({0, 0, m, n}));
      CHECK(out.at({0, 1, m, n}) == 0);
    }

  // Spatially constant maps embed into the full weight-shaped form.
  Rng rng2(8);
  Tensor<double> pair = randn(rng2, {1, 2, 2, 1, 1});
  Tensor<double> full = broadcast_to(pair, {1, 2, 2, 3, 3});
  CHECK(max_abs_diff(oracles::channel_pair_attention_conv(x, pair, k, 1, 1),
                     oracles::attend_activations_then_conv(x, full, k, 1, 1)) < 1e-12);
}

TEST_CASE("per-sample kernels") {
  Rng rng(9);
  Tensor<double> x = randn(rng, {3, 2, 4, 4});
  Tensor<double> k = randn(rng, {2, 2, 3, 3});

  // All samples share the kernel: equals the plain reference.
  Tensor<double> shared({3, 2, 2, 3, 3});
  for (int64_t l = 0; l < 3; ++l)
    for (int64_t i = 0; i < k.numel(); ++i) shared[l * k.numel() + i] = k[i];
  CHECK(max_abs_diff(oracles::per_sample_aw_conv(x, shared, 1, 1),
                     oracles::reference_conv(x, k, 1, 1)) == 0);

  // Single sample degenerates to the reference.
  Tensor<double> x1 = randn(rng, {1, 2, 4, 4});
  Tensor<double> k1 = randn(rng, {1, 2, 2, 3, 3});
  CHECK(max_abs_diff(oracles::per_sample_aw_conv(x1, k1, 1, 1),
                     oracles::reference_conv(x1, k1.reshape({2, 2, 3, 3}), 1, 1)) == 0);
}

TEST_CASE("oracle compare and size guard") {
  Tensor<double> a({2}, {1, 2});
  Tensor<double> b({2}, {1, 2.5});
  oracles::OracleReport r = oracles::compare(a, b);
  CHECK(r.num_elements == 2);
  CHECK(r.max_abs_diff == 0.5);
  CHECK(r.max_rel_diff == doctest::Approx(0.2));

  Tensor<double> big({4, 64, 64, 64});
  Tensor<double> kbig({64, 64, 1, 1});
  CHECK_THROWS_AS(oracles::reference_conv(big, kbig, 1, 0), UsageError);
}

TEST_CASE("stride and padding geometry matches the optimized path") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t stride = 1 + trial % 2;
    Tensor<double> x = randn(rng, {2, 2, 6, 7});
    Tensor<double> k = randn(rng, {3, 2, 3, 3});
    Tensor<double> ref = oracles::reference_conv(x, k, stride, 1);
    Tensor<double> fast = nn::conv2d<double>(x, k, nullptr, stride, 1, 1);
    CHECK(max_abs_diff(ref, fast) < 1e-10);
  }
}
