// Microbenchmarks for the batched-kernel lowering and the convolution
// primitives it rides on.

#include <benchmark/benchmark.h>

#include "awconv/aw_conv.hpp"
#include "awconv/nn_ops.hpp"
#include "awconv/rng.hpp"

using namespace awconv;

namespace {

Tensor<float> randn(Rng& rng, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

void aw_args(benchmark::internal::Benchmark* b) {
  // batch, channels, spatial
  b->Args({4, 16, 16})->Args({8, 32, 16})->Args({8, 64, 8})->Args({16, 32, 32})->Args({32, 64, 8});
}

}  // namespace

static void BM_AwConvGrouped(benchmark::State& state) {
  Rng rng(0);
  const int64_t n = state.range(0), c = state.range(1), hw = state.range(2);
  Tensor<float> x = randn(rng, {n, c, hw, hw});
  Tensor<float> ak = randn(rng, {n, c, c, 3, 3});
  for (auto _ : state) {
    benchmark::DoNotOptimize(aw_conv2d(x, ak, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_AwConvGrouped)->Apply(aw_args);

static void BM_AwConvPerSampleLoop(benchmark::State& state) {
  Rng rng(0);
  const int64_t n = state.range(0), c = state.range(1), hw = state.range(2);
  Tensor<float> x = randn(rng, {n, c, hw, hw});
  Tensor<float> ak = randn(rng, {n, c, c, 3, 3});
  for (auto _ : state) {
    benchmark::DoNotOptimize(aw_conv2d_per_sample(x, ak, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_AwConvPerSampleLoop)->Apply(aw_args);

static void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(0);
  const int64_t n = state.range(0), c = state.range(1), hw = state.range(2);
  Tensor<float> x = randn(rng, {n, c, hw, hw});
  Tensor<float> w = randn(rng, {c, c, 3, 3});
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::conv2d<float>(x, w, nullptr, 1, 1, 1));
  }
  const double macs = static_cast<double>(n * c * hw * hw) * c * 9;
  state.counters["GFLOP/s"] =
      benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv2dForward)->Args({32, 16, 32})->Args({32, 32, 16})->Args({32, 64, 8});

static void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(0);
  const int64_t n = state.range(0), c = state.range(1), hw = state.range(2);
  Tensor<float> x = randn(rng, {n, c, hw, hw});
  Tensor<float> w = randn(rng, {c, c, 3, 3});
  Tensor<float> go = nn::conv2d<float>(x, w, nullptr, 1, 1, 1);
  Tensor<float> gi(x.shape()), gw(w.shape());
  for (auto _ : state) {
    fill(gi, 0.0f);
    fill(gw, 0.0f);
    nn::conv2d_backward<float>(x, w, go, 1, 1, 1, &gi, &gw, nullptr);
    benchmark::DoNotOptimize(gi.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 16, 32})->Args({32, 32, 16});

static void BM_ComputeAttention(benchmark::State& state) {
  Rng rng(0);
  const int64_t n = state.range(0), c = state.range(1), hw = state.range(2);
  AttentionConfig cfg;
  AwConvLayer<float> layer = AwConvLayer<float>::create(c, c, 3, 1, 1, cfg, rng);
  Tensor<float> x = randn(rng, {n, c, hw, hw});
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_attention(x, layer));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ComputeAttention)->Args({32, 64, 8})->Args({16, 32, 16});

BENCHMARK_MAIN();
