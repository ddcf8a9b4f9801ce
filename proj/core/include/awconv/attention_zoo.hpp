#pragma once

#include "awconv/nn_ops.hpp"
#include "awconv/rng.hpp"

namespace awconv {

// Squeeze-style channel gating: X * sigmoid(fc2(relu(fc1(gap(X))))), the gate
// broadcast over the spatial extent.
template <typename T>
struct SeModule {
  Tensor<T> fc1_weight, fc1_bias;  // (C/r, C), (C/r)
  Tensor<T> fc2_weight, fc2_bias;  // (C, C/r), (C)
  int64_t reduction = 16;

  int64_t channels() const { return fc2_weight.extent(0); }
  int64_t param_count() const {
    return fc1_weight.numel() + fc1_bias.numel() + fc2_weight.numel() + fc2_bias.numel();
  }

  static SeModule<T> create(int64_t channels, int64_t reduction, Rng& rng);
};

// CBAM variants as exercised here: `full` gates channels from avg+max
// descriptors and then gates spatially; `maxpool` keeps the avg+max channel
// gate but drops the spatial gate; `spatial` keeps the spatial gate but
// computes the channel gate from the average descriptor only.
enum class CbamVariant { full, maxpool, spatial };

template <typename T>
struct CbamModule {
  SeModule<T> mlp;                 // shared channel MLP
  Tensor<T> spatial_weight;        // (1, 2, 7, 7)
  BatchNormState<T> spatial_bn;
  CbamVariant variant = CbamVariant::full;

  int64_t channels() const { return mlp.channels(); }
  bool has_spatial() const { return variant != CbamVariant::maxpool; }
  bool uses_max_descriptor() const { return variant != CbamVariant::spatial; }
  int64_t param_count() const {
    int64_t n = mlp.param_count();
    if (has_spatial()) n += spatial_weight.numel() + spatial_bn.gamma.numel() * 2;
    return n;
  }

  static CbamModule<T> create(int64_t channels, int64_t reduction, CbamVariant variant, Rng& rng);
};

// Plain forwards run with eval-mode batch norm and leave the module untouched.
template <typename T>
Tensor<T> se_gate(const Tensor<T>& x, const SeModule<T>& m);  // (N,C,1,1)

template <typename T>
Tensor<T> se_forward(const Tensor<T>& x, const SeModule<T>& m);

template <typename T>
Tensor<T> cbam_forward(const Tensor<T>& x, const CbamModule<T>& m);

// True iff every gate value lies strictly in (0,1); NaN anywhere reports
// false rather than crashing.
template <typename T>
bool gate_range_check(const SeModule<T>& m, const Tensor<T>& x);

template <typename T>
bool gate_range_check(const CbamModule<T>& m, const Tensor<T>& x);

// ---- differentiable path ----

template <typename T>
struct SeNodes {
  Node<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

template <typename T>
SeNodes<T> bind_se(Tape<T>& tape, SeModule<T>& m, bool requires_grad);

template <typename T>
Node<T> se_forward(Node<T> x, const SeNodes<T>& m);

template <typename T>
struct CbamNodes {
  SeNodes<T> mlp;
  Node<T> spatial_weight, spatial_bn_gamma, spatial_bn_beta;
  Tensor<T>* spatial_bn_mean = nullptr;
  Tensor<T>* spatial_bn_var = nullptr;
  T bn_momentum = T(0.1);
  T bn_eps = T(1e-5);
  CbamVariant variant = CbamVariant::full;
};

template <typename T>
CbamNodes<T> bind_cbam(Tape<T>& tape, CbamModule<T>& m, bool requires_grad);

template <typename T>
Node<T> cbam_forward(Node<T> x, const CbamNodes<T>& m, bool training);

}  // namespace awconv
