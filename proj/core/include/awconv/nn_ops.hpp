#pragma once

#include <cstdint>
#include <vector>

#include "awconv/autodiff.hpp"
#include "awconv/tensor.hpp"

namespace awconv {

// Batch-norm parameters and running statistics for one channel axis.
// gamma/beta are learnable; running_mean/running_var are buffers updated in
// training mode and the only statistics consulted in eval mode.
template <typename T>
struct BatchNormState {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(int64_t channels)
      : gamma(Tensor<T>::full({channels}, T(1))),
        beta(Tensor<T>::zeros({channels})),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))) {}

  int64_t channels() const { return gamma.numel(); }
};

namespace nn {

// ---- plain tensor kernels (forward only) ----

// input (N,C1,H,W), weight (C2,C1/groups,h,w), optional bias (C2).
// Out-of-bounds taps read zero; H' = (H + 2*pad - h)/stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int64_t stride = 1, int64_t padding = 0, int64_t groups = 1);

// Accumulates into any of the provided gradient tensors (pass nullptr to
// skip); shapes must already match input/weight/bias.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                     const Tensor<T>& grad_output, int64_t stride, int64_t padding,
                     int64_t groups, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias);

// 1x1 convolution mixing channels at each spatial position: conv2d with
// h=w=1, stride 1, no padding, no bias.
template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& input, const Tensor<T>& weight) {
  if (weight.rank() != 4 || weight.extent(2) != 1 || weight.extent(3) != 1) {
    throw ShapeError("pointwise_conv weight must be (Cout,Cin,1,1)");
  }
  return conv2d<T>(input, weight, nullptr, 1, 0, 1);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Bin (i,j) averages input rows [floor(i*H/out_h), ceil((i+1)*H/out_h)) and
// the analogous columns; bins may overlap when extents do not divide.
template <typename T>
Tensor<T> adaptive_avgpool2d(const Tensor<T>& x, int64_t out_h, int64_t out_w);

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int64_t kernel, int64_t stride, int64_t padding = 0,
                    std::vector<int64_t>* argmax = nullptr);

template <typename T>
Tensor<T> global_maxpool(const Tensor<T>& x, std::vector<int64_t>* argmax = nullptr);

// x (N,in), weight (out,in), optional bias (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias);

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      T momentum, T eps);

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean over the batch of -log softmax(logits)[label]; logits (N,K).
template <typename T>
T cross_entropy_value(const Tensor<T>& logits, const std::vector<int32_t>& labels);

// C (m x n) += A (m x k) * B (k x n), all row-major. Accumulation over k is
// ascending for every output element, so results do not depend on how callers
// partition the m dimension.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// C (m x n) += A (m x k) * B(n x k)^T.
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// ---- autodiff wrappers ----

template <typename T>
Node<T> conv2d(Node<T> input, Node<T> weight, Node<T> bias, int64_t stride = 1,
               int64_t padding = 0, int64_t groups = 1);

template <typename T>
Node<T> conv2d(Node<T> input, Node<T> weight, int64_t stride = 1, int64_t padding = 0,
               int64_t groups = 1);

template <typename T>
Node<T> relu(Node<T> x);

template <typename T>
Node<T> sigmoid(Node<T> x);

template <typename T>
Node<T> adaptive_avgpool2d(Node<T> x, int64_t out_h, int64_t out_w);

template <typename T>
Node<T> maxpool2d(Node<T> x, int64_t kernel, int64_t stride, int64_t padding = 0);

template <typename T>
Node<T> global_avgpool(Node<T> x);

template <typename T>
Node<T> global_maxpool(Node<T> x);

template <typename T>
Node<T> linear(Node<T> x, Node<T> weight, Node<T> bias);

// Training mode normalizes with batch statistics and updates the running
// buffers in place; eval mode normalizes with the running buffers.
template <typename T>
Node<T> batchnorm2d(Node<T> x, Node<T> gamma, Node<T> beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, bool training, T momentum = T(0.1),
                    T eps = T(1e-5));

template <typename T>
Node<T> batchnorm2d(Node<T> x, Node<T> gamma, Node<T> beta, BatchNormState<T>& state,
                    bool training);

// (N,Ca,H,W) ++ (N,Cb,H,W) -> (N,Ca+Cb,H,W)
template <typename T>
Node<T> concat_channels(Node<T> a, Node<T> b);

// Per-pixel mean / max over the channel axis -> (N,1,H,W).
template <typename T>
Node<T> channel_mean(Node<T> x);

template <typename T>
Node<T> channel_max(Node<T> x);

template <typename T>
Node<T> softmax_cross_entropy(Node<T> logits, const std::vector<int32_t>& labels);

}  // namespace nn
}  // namespace awconv
