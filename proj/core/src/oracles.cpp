#include "awconv/oracles.hpp"

#include <cmath>

#include "awconv/errors.hpp"

namespace awconv::oracles {

namespace {

constexpr int64_t kMaxOutputElements = 1000000;

struct ConvGeometry {
  int64_t batch, in_ch, in_h, in_w;
  int64_t out_ch, k_in_ch, k_h, k_w;
  int64_t out_h, out_w;
};

ConvGeometry check_geometry(const Tensor<double>& input, const Shape& kshape, int64_t stride,
                            int64_t padding) {
  if (input.rank() != 4) throw ShapeError("oracle input must be (N,C1,H,W)");
  if (kshape.size() != 4) throw ShapeError("oracle kernel must be (C2,C1,h,w)");
  ConvGeometry g{};
  g.batch = input.extent(0);
  g.in_ch = input.extent(1);
  g.in_h = input.extent(2);
  g.in_w = input.extent(3);
  g.out_ch = kshape[0];
  g.k_in_ch = kshape[1];
  g.k_h = kshape[2];
  g.k_w = kshape[3];
  if (g.k_in_ch != g.in_ch) {
    throw ShapeError("kernel input channels " + std::to_string(g.k_in_ch) +
                     " do not match input channels " + std::to_string(g.in_ch));
  }
  if (stride < 1) throw ShapeError("stride must be >= 1");
  if (padding < 0) throw ShapeError("padding must be >= 0");
  g.out_h = (g.in_h + 2 * padding - g.k_h) / stride + 1;
  g.out_w = (g.in_w + 2 * padding - g.k_w) / stride + 1;
  if (g.out_h < 1 || g.out_w < 1) throw ShapeError("kernel larger than padded input");
  if (g.batch * g.out_ch * g.out_h * g.out_w > kMaxOutputElements) {
    throw UsageError("oracle output too large; oracles are for small instances only");
  }
  return g;
}

// One output element. `maps` may be null (plain convolution), rank 4
// (shared across output channels), or rank 5 (per channel pair); rank-5 maps
// with 1x1 spatial extent rescale taps uniformly.
double tap_sum(const Tensor<double>& input, const Tensor<double>* maps,
               const Tensor<double>& kernel, int64_t kernel_sample, const ConvGeometry& g,
               int64_t l, int64_t p, int64_t m, int64_t n, int64_t stride, int64_t padding) {
  const int64_t m0 = m * stride - padding;
  const int64_t n0 = n * stride - padding;
  double acc = 0;
  for (int64_t o = 0; o < g.in_ch; ++o) {
    for (int64_t j = 0; j < g.k_h; ++j) {
      const int64_t row = m0 + j;
      if (row < 0 || row >= g.in_h) continue;
      for (int64_t k = 0; k < g.k_w; ++k) {
        const int64_t col = n0 + k;
        if (col < 0 || col >= g.in_w) continue;
        const double x = input[((l * g.in_ch + o) * g.in_h + row) * g.in_w + col];
        const double w = kernel[(((kernel_sample * g.out_ch + p) * g.in_ch + o) * g.k_h + j) * g.k_w + k];
        double a = 1.0;
        if (maps != nullptr) {
          if (maps->rank() == 4) {
            a = (*maps)[((l * g.in_ch + o) * g.k_h + j) * g.k_w + k];
          } else {
            const int64_t mh = maps->extent(3), mw = maps->extent(4);
            const int64_t jj = mh == 1 ? 0 : j;
            const int64_t kk = mw == 1 ? 0 : k;
            a = (*maps)[(((l * g.out_ch + p) * g.in_ch + o) * mh + jj) * mw + kk];
          }
        }
        acc += x * a * w;
      }
    }
  }
  return acc;
}

Tensor<double> run_conv(const Tensor<double>& input, const Tensor<double>* maps,
                        const Tensor<double>& kernel, bool per_sample_kernel, int64_t stride,
                        int64_t padding) {
  const Shape kshape = per_sample_kernel
                           ? Shape(kernel.shape().begin() + 1, kernel.shape().end())
                           : kernel.shape();
  const ConvGeometry g = check_geometry(input, kshape, stride, padding);
  Tensor<double> out({g.batch, g.out_ch, g.out_h, g.out_w});
  int64_t off = 0;
  for (int64_t l = 0; l < g.batch; ++l) {
    const int64_t ks = per_sample_kernel ? l : 0;
    for (int64_t p = 0; p < g.out_ch; ++p) {
      for (int64_t m = 0; m < g.out_h; ++m) {
        for (int64_t n = 0; n < g.out_w; ++n) {
          out[off++] = tap_sum(input, maps, kernel, ks, g, l, p, m, n, stride, padding);
        }
      }
    }
  }
  return out;
}

}  // namespace

OracleReport compare(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw ShapeError("oracle compare requires equal shapes");
  OracleReport r;
  r.num_elements = a.numel();
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    r.max_abs_diff = std::max(r.max_abs_diff, d);
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    r.max_rel_diff = std::max(r.max_rel_diff, d / denom);
  }
  return r;
}

Tensor<double> reference_conv(const Tensor<double>& input, const Tensor<double>& kernel,
                              int64_t stride, int64_t padding) {
  return run_conv(input, nullptr, kernel, false, stride, padding);
}

Tensor<double> attend_activations_then_conv(const Tensor<double>& input,
                                            const Tensor<double>& maps,
                                            const Tensor<double>& kernel, int64_t stride,
                                            int64_t padding) {
  if (maps.rank() != 4 && maps.rank() != 5) {
    throw ShapeError("attention maps must be (N,C1,h,w) or (N,C2,C1,h,w)");
  }
  if (maps.rank() == 4) {
    if (maps.extent(0) != input.extent(0) || maps.extent(1) != input.extent(1) ||
        maps.extent(2) != kernel.extent(2) || maps.extent(3) != kernel.extent(3)) {
      throw ShapeError("shared attention maps must be (N,C1,h,w)");
    }
  } else {
    if (maps.extent(0) != input.extent(0) || maps.extent(1) != kernel.extent(0) ||
        maps.extent(2) != input.extent(1) || maps.extent(3) != kernel.extent(2) ||
        maps.extent(4) != kernel.extent(3)) {
      throw ShapeError("full attention maps must be (N,C2,C1,h,w)");
    }
  }
  return run_conv(input, &maps, kernel, false, stride, padding);
}

Tensor<double> channel_pair_attention_conv(const Tensor<double>& input,
                                           const Tensor<double>& maps,
                                           const Tensor<double>& kernel, int64_t stride,
                                           int64_t padding) {
  if (maps.rank() != 5 || maps.extent(3) != 1 || maps.extent(4) != 1) {
    throw ShapeError("channel-pair attention maps must be (N,C2,C1,1,1)");
  }
  if (maps.extent(0) != input.extent(0) || maps.extent(1) != kernel.extent(0) ||
      maps.extent(2) != input.extent(1)) {
    throw ShapeError("channel-pair attention maps must be (N,C2,C1,1,1)");
  }
  return run_conv(input, &maps, kernel, false, stride, padding);
}

Tensor<double> per_sample_aw_conv(const Tensor<double>& input, const Tensor<double>& kernels,
                                  int64_t stride, int64_t padding) {
  if (kernels.rank() != 5) throw ShapeError("per-sample kernels must be (N,C2,C1,h,w)");
  if (kernels.extent(0) != input.extent(0)) {
    throw ShapeError("kernel batch " + std::to_string(kernels.extent(0)) +
                     " does not match input batch " + std::to_string(input.extent(0)));
  }
  return run_conv(input, nullptr, kernels, true, stride, padding);
}

}  // namespace awconv::oracles
