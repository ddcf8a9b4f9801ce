#pragma once

#include <algorithm>
#include <optional>

#include "awconv/nn_ops.hpp"
#include "awconv/rng.hpp"
#include "awconv/tensor.hpp"

namespace awconv {

// Ratios of the attention branch: Pointconv1 reduces channels by `reduction`;
// the final maps are expanded along the input-channel axis by `c1_ratio`.
// Expansion along the batch, output-channel, and spatial axes is fixed at 1.
struct AttentionConfig {
  int64_t reduction = 16;
  int64_t c1_ratio = 0;  // 0 resolves to the layer's input channel count
};

inline int64_t attention_mid_channels(int64_t in_ch, int64_t reduction) {
  return std::max<int64_t>(in_ch / reduction, 1);
}

// Drop-in convolution layer whose effective kernels are modulated per batch
// sample by attention maps computed from that sample's input.
template <typename T>
struct AwConvLayer {
  Tensor<T> weight;      // (C2, C1, h, w)
  Tensor<T> pc1_weight;  // (mid, C1, 1, 1)
  BatchNormState<T> bn1;
  Tensor<T> pc2_weight;  // (C2*C1/c1_ratio, mid, 1, 1)
  BatchNormState<T> bn2;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t c1_ratio = 1;
  int64_t reduction = 16;
  // Test hook: when set, the branch is bypassed and this tensor (broadcast to
  // (N,C2,C1,h,w)) is used as the attention maps. The sigmoid never emits an
  // exact 0, so identities at A=0 are only reachable by injection.
  std::optional<Tensor<T>> injected_attention;

  int64_t in_channels() const { return weight.extent(1); }
  int64_t out_channels() const { return weight.extent(0); }
  int64_t kernel_h() const { return weight.extent(2); }
  int64_t kernel_w() const { return weight.extent(3); }
  int64_t mid_channels() const { return pc1_weight.extent(0); }

  static AwConvLayer<T> create(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
                               int64_t padding, AttentionConfig cfg, Rng& rng);
};

// Expansion along the input-channel axis:
// a2.reshape(N,C2,C1/r,h,w).unsqueeze(3).expand(N,C2,C1/r,r,h,w).reshape(N,C2,C1,h,w),
// so consecutive runs of `c1_ratio` entries along C1 are equal.
template <typename T>
Tensor<T> expand_c1(const Tensor<T>& a2, int64_t c1, int64_t c1_ratio);

template <typename T>
Node<T> expand_c1(Node<T> a2, int64_t c1, int64_t c1_ratio);

// AK = K + A (.) K; maps (N,C2,C1,h,w), weight (C2,C1,h,w).
template <typename T>
Tensor<T> attentional_weights(const Tensor<T>& maps, const Tensor<T>& weight);

template <typename T>
Node<T> attentional_weights(Node<T> maps, Node<T> weight);

// Convolution with per-sample kernels (N,C2,C1,h,w): sample l is convolved
// with kernels[l]. Lowered to a single grouped convolution with N groups.
template <typename T>
Tensor<T> aw_conv2d(const Tensor<T>& input, const Tensor<T>& kernels, int64_t stride = 1,
                    int64_t padding = 0);

template <typename T>
Node<T> aw_conv2d(Node<T> input, Node<T> kernels, int64_t stride = 1, int64_t padding = 0);

// Same contract via an explicit per-sample loop; kept as a fallback and for
// timing against the grouped lowering.
template <typename T>
Tensor<T> aw_conv2d_per_sample(const Tensor<T>& input, const Tensor<T>& kernels,
                               int64_t stride = 1, int64_t padding = 0);

// Attention-map pipeline: pool to kernel resolution, two pointwise
// convolutions with their norms and activations, then channel expansion.
// The plain overloads run with eval-mode batch norm and leave the layer
// untouched.
template <typename T>
Tensor<T> compute_attention(const Tensor<T>& input, const AwConvLayer<T>& layer);

template <typename T>
Tensor<T> aw_layer_forward(const Tensor<T>& input, const AwConvLayer<T>& layer);

// Node bundle for the differentiable path; running statistics are referenced
// in place so training updates the caller's buffers.
template <typename T>
struct AwConvNodes {
  Node<T> weight, pc1_weight, bn1_gamma, bn1_beta, pc2_weight, bn2_gamma, bn2_beta;
  Tensor<T>* bn1_mean = nullptr;
  Tensor<T>* bn1_var = nullptr;
  Tensor<T>* bn2_mean = nullptr;
  Tensor<T>* bn2_var = nullptr;
  T bn_momentum = T(0.1);
  T bn_eps = T(1e-5);
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t c1_ratio = 1;
  const Tensor<T>* injected_attention = nullptr;
};

template <typename T>
AwConvNodes<T> bind_aw_layer(Tape<T>& tape, AwConvLayer<T>& layer, bool requires_grad);

template <typename T>
Node<T> compute_attention(Node<T> input, const AwConvNodes<T>& layer, bool training);

template <typename T>
Node<T> aw_layer_forward(Node<T> input, const AwConvNodes<T>& layer, bool training);

}  // namespace awconv
