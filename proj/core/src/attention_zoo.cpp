#include "awconv/attention_zoo.hpp"

#include <cmath>

#include "awconv/errors.hpp"

namespace awconv {

namespace {

template <typename T>
void kaiming_fill(Tensor<T>& w, int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal() * stddev);
}

// (N,C,H,W) -> (N,C) average descriptor.
template <typename T>
Tensor<T> gap_2d(const Tensor<T>& x) {
  return nn::adaptive_avgpool2d(x, 1, 1).reshape({x.extent(0), x.extent(1)});
}

template <typename T>
Tensor<T> gmp_2d(const Tensor<T>& x) {
  return nn::global_maxpool(x, nullptr).reshape({x.extent(0), x.extent(1)});
}

// Shared-MLP pre-activation: fc2(relu(fc1(d))).
template <typename T>
Tensor<T> mlp_pre(const Tensor<T>& d, const SeModule<T>& m) {
  Tensor<T> h = nn::relu(nn::linear(d, m.fc1_weight, &m.fc1_bias));
  return nn::linear(h, m.fc2_weight, &m.fc2_bias);
}

// Gates are sigmoid outputs; extreme pre-activations may round to exactly 0
// or 1, so the closed interval is accepted. NaN fails the comparison.
template <typename T>
bool gate_in_unit_interval(const Tensor<T>& gate) {
  for (int64_t i = 0; i < gate.numel(); ++i) {
    const T v = gate[i];
    if (!(v >= T(0) && v <= T(1))) return false;
  }
  return true;
}

}  // namespace

template <typename T>
SeModule<T> SeModule<T>::create(int64_t channels, int64_t reduction, Rng& rng) {
  if (channels < 1 || reduction < 1) throw ShapeError("SE channels/reduction must be >= 1");
  const int64_t mid = std::max<int64_t>(channels / reduction, 1);
  SeModule<T> m;
  m.reduction = reduction;
  m.fc1_weight = Tensor<T>({mid, channels});
  m.fc1_bias = Tensor<T>::zeros({mid});
  m.fc2_weight = Tensor<T>({channels, mid});
  m.fc2_bias = Tensor<T>::zeros({channels});
  kaiming_fill(m.fc1_weight, channels, rng);
  kaiming_fill(m.fc2_weight, mid, rng);
  return m;
}

template <typename T>
CbamModule<T> CbamModule<T>::create(int64_t channels, int64_t reduction, CbamVariant variant,
                                    Rng& rng) {
  CbamModule<T> m;
  m.mlp = SeModule<T>::create(channels, reduction, rng);
  m.variant = variant;
  m.spatial_weight = Tensor<T>({1, 2, 7, 7});
  m.spatial_bn = BatchNormState<T>(1);
  kaiming_fill(m.spatial_weight, 2 * 7 * 7, rng);
  return m;
}

template <typename T>
Tensor<T> se_gate(const Tensor<T>& x, const SeModule<T>& m) {
  if (x.rank() != 4 || x.extent(1) != m.channels()) {
    throw ShapeError("se_gate input channels do not match the module");
  }
  Tensor<T> g = nn::sigmoid(mlp_pre(gap_2d(x), m));
  return g.reshape({x.extent(0), x.extent(1), 1, 1});
}

template <typename T>
Tensor<T> se_forward(const Tensor<T>& x, const SeModule<T>& m) {
  return hadamard(x, se_gate(x, m));
}

namespace {

template <typename T>
Tensor<T> cbam_channel_gate(const Tensor<T>& x, const CbamModule<T>& m) {
  Tensor<T> pre = mlp_pre(gap_2d(x), m.mlp);
  if (m.uses_max_descriptor()) pre = add(pre, mlp_pre(gmp_2d(x), m.mlp));
  return nn::sigmoid(pre).reshape({x.extent(0), x.extent(1), 1, 1});
}

template <typename T>
Tensor<T> cbam_spatial_gate(const Tensor<T>& x, const CbamModule<T>& m) {
  const int64_t batch = x.extent(0), ch = x.extent(1), hw = x.extent(2) * x.extent(3);
  Tensor<T> desc({batch, 2, x.extent(2), x.extent(3)});
  for (int64_t l = 0; l < batch; ++l) {
    for (int64_t i = 0; i < hw; ++i) {
      T sum = T(0);
      T best = x[l * ch * hw + i];
      for (int64_t c = 0; c < ch; ++c) {
        const T v = x[(l * ch + c) * hw + i];
        sum += v;
        best = std::max(best, v);
      }
      desc[(l * 2 + 0) * hw + i] = sum / static_cast<T>(ch);
      desc[(l * 2 + 1) * hw + i] = best;
    }
  }
  Tensor<T> s = nn::conv2d<T>(desc, m.spatial_weight, nullptr, 1, 3, 1);
  Tensor<T> rm = m.spatial_bn.running_mean, rv = m.spatial_bn.running_var;
  s = nn::batchnorm2d(s, m.spatial_bn.gamma, m.spatial_bn.beta, rm, rv, false,
                      m.spatial_bn.momentum, m.spatial_bn.eps);
  return nn::sigmoid(s);
}

}  // namespace

template <typename T>
Tensor<T> cbam_forward(const Tensor<T>& x, const CbamModule<T>& m) {
  if (x.rank() != 4 || x.extent(1) != m.channels()) {
    throw ShapeError("cbam_forward input channels do not match the module");
  }
  Tensor<T> gated = hadamard(x, cbam_channel_gate(x, m));
  if (m.has_spatial()) gated = hadamard(gated, cbam_spatial_gate(gated, m));
  return gated;
}

template <typename T>
bool gate_range_check(const SeModule<T>& m, const Tensor<T>& x) {
  if (!all_finite(x)) return false;
  return gate_in_unit_interval(se_gate(x, m));
}

template <typename T>
bool gate_range_check(const CbamModule<T>& m, const Tensor<T>& x) {
  if (!all_finite(x)) return false;
  if (!gate_in_unit_interval(cbam_channel_gate(x, m))) return false;
  if (m.has_spatial()) {
    Tensor<T> gated = hadamard(x, cbam_channel_gate(x, m));
    return gate_in_unit_interval(cbam_spatial_gate(gated, m));
  }
  return true;
}

// ---- differentiable path ----

template <typename T>
SeNodes<T> bind_se(Tape<T>& tape, SeModule<T>& m, bool requires_grad) {
  SeNodes<T> n;
  n.fc1_weight = tape.leaf(m.fc1_weight, requires_grad);
  n.fc1_bias = tape.leaf(m.fc1_bias, requires_grad);
  n.fc2_weight = tape.leaf(m.fc2_weight, requires_grad);
  n.fc2_bias = tape.leaf(m.fc2_bias, requires_grad);
  return n;
}

namespace {

template <typename T>
Node<T> mlp_pre_node(Node<T> desc, const SeNodes<T>& m) {
  Node<T> h = nn::relu(nn::linear(desc, m.fc1_weight, m.fc1_bias));
  return nn::linear(h, m.fc2_weight, m.fc2_bias);
}

}  // namespace

template <typename T>
Node<T> se_forward(Node<T> x, const SeNodes<T>& m) {
  const Tensor<T>& xv = x.value();
  const int64_t batch = xv.extent(0), ch = xv.extent(1);
  Node<T> d = ad::reshape(nn::global_avgpool(x), {batch, ch});
  Node<T> g = nn::sigmoid(mlp_pre_node(d, m));
  return ad::hadamard(x, ad::reshape(g, {batch, ch, 1, 1}));
}

template <typename T>
CbamNodes<T> bind_cbam(Tape<T>& tape, CbamModule<T>& m, bool requires_grad) {
  CbamNodes<T> n;
  n.mlp = bind_se(tape, m.mlp, requires_grad);
  n.spatial_weight = tape.leaf(m.spatial_weight, requires_grad);
  n.spatial_bn_gamma = tape.leaf(m.spatial_bn.gamma, requires_grad);
  n.spatial_bn_beta = tape.leaf(m.spatial_bn.beta, requires_grad);
  n.spatial_bn_mean = &m.spatial_bn.running_mean;
  n.spatial_bn_var = &m.spatial_bn.running_var;
  n.bn_momentum = m.spatial_bn.momentum;
  n.bn_eps = m.spatial_bn.eps;
  n.variant = m.variant;
  return n;
}

template <typename T>
Node<T> cbam_forward(Node<T> x, const CbamNodes<T>& m, bool training) {
  const Tensor<T>& xv = x.value();
  const int64_t batch = xv.extent(0), ch = xv.extent(1);
  Node<T> pre = mlp_pre_node(ad::reshape(nn::global_avgpool(x), {batch, ch}), m.mlp);
  if (m.variant != CbamVariant::spatial) {
    Node<T> dmax = ad::reshape(nn::global_maxpool(x), {batch, ch});
    pre = ad::add(pre, mlp_pre_node(dmax, m.mlp));
  }
  Node<T> cgate = ad::reshape(nn::sigmoid(pre), {batch, ch, 1, 1});
  Node<T> gated = ad::hadamard(x, cgate);
  if (m.variant != CbamVariant::maxpool) {
    Node<T> desc = nn::concat_channels(nn::channel_mean(gated), nn::channel_max(gated));
    Node<T> s = nn::conv2d(desc, m.spatial_weight, 1, 3, 1);
    s = nn::batchnorm2d(s, m.spatial_bn_gamma, m.spatial_bn_beta, *m.spatial_bn_mean,
                        *m.spatial_bn_var, training, m.bn_momentum, m.bn_eps);
    gated = ad::hadamard(gated, nn::sigmoid(s));
  }
  return gated;
}

#define AWCONV_INSTANTIATE_ZOO(T)                                               \
  template struct SeModule<T>;                                                  \
  template struct CbamModule<T>;                                                \
  template Tensor<T> se_gate<T>(const Tensor<T>&, const SeModule<T>&);          \
  template Tensor<T> se_forward<T>(const Tensor<T>&, const SeModule<T>&);       \
  template Tensor<T> cbam_forward<T>(const Tensor<T>&, const CbamModule<T>&);   \
  template bool gate_range_check<T>(const SeModule<T>&, const Tensor<T>&);      \
  template bool gate_range_check<T>(const CbamModule<T>&, const Tensor<T>&);    \
  template SeNodes<T> bind_se<T>(Tape<T>&, SeModule<T>&, bool);                 \
  template Node<T> se_forward<T>(Node<T>, const SeNodes<T>&);                   \
  template CbamNodes<T> bind_cbam<T>(Tape<T>&, CbamModule<T>&, bool);           \
  template Node<T> cbam_forward<T>(Node<T>, const CbamNodes<T>&, bool);

AWCONV_INSTANTIATE_ZOO(float)
AWCONV_INSTANTIATE_ZOO(double)

}  // namespace awconv
