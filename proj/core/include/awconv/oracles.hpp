#pragma once

#include "awconv/tensor.hpp"

// Brute-force reference implementations of the convolution and attention
// forms, written as literal loop nests. Slow by design: every optimized path
// in the library is tested against these. f64 only, no autodiff, and total
// output size is capped to keep misuse out of hot paths.
namespace awconv::oracles {

struct OracleReport {
  double max_abs_diff = 0;
  double max_rel_diff = 0;
  int64_t num_elements = 0;
};

OracleReport compare(const Tensor<double>& a, const Tensor<double>& b);

// Plain convolution: O[l,p,m,n] = sum_{o,j,k} I[l,o,m'+j,n'+k] * K[p,o,j,k],
// with m' = m*stride - padding and out-of-bounds taps reading zero.
Tensor<double> reference_conv(const Tensor<double>& input, const Tensor<double>& kernel,
                              int64_t stride = 1, int64_t padding = 0);

// Attention applied on the activations side, inside the convolution's tap
// loop. `maps` is either (N,C1,h,w) — one map shared across output channels —
// or (N,C2,C1,h,w) — one map per (output, input) channel pair.
Tensor<double> attend_activations_then_conv(const Tensor<double>& input,
                                            const Tensor<double>& maps,
                                            const Tensor<double>& kernel, int64_t stride = 1,
                                            int64_t padding = 0);

// Spatially constant per-channel-pair attention: maps is (N,C2,C1,1,1) and
// rescales the input once per (sample, output channel, input channel).
Tensor<double> channel_pair_attention_conv(const Tensor<double>& input,
                                           const Tensor<double>& maps,
                                           const Tensor<double>& kernel, int64_t stride = 1,
                                           int64_t padding = 0);

// Per-sample kernels: AK is (N,C2,C1,h,w) and sample l is convolved with
// AK[l], the explicit loop the batched lowering is checked against.
Tensor<double> per_sample_aw_conv(const Tensor<double>& input, const Tensor<double>& kernels,
                                  int64_t stride = 1, int64_t padding = 0);

}  // namespace awconv::oracles
