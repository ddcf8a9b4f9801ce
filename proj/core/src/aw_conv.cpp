#include "awconv/aw_conv.hpp"

#include <cmath>

#include "awconv/errors.hpp"

namespace awconv {

namespace {

void check_expand_args(const Shape& a2, int64_t c1, int64_t c1_ratio) {
  if (a2.size() != 4) throw ShapeError("expand_c1 input must be (N,C2*C1/r,h,w)");
  if (c1_ratio < 1 || c1 % c1_ratio != 0) {
    throw ShapeError("c1_ratio " + std::to_string(c1_ratio) + " must divide C1 " +
                     std::to_string(c1));
  }
  const int64_t reduced = c1 / c1_ratio;
  if (a2[1] % reduced != 0) {
    throw ShapeError("expand_c1 channel extent " + std::to_string(a2[1]) +
                     " is not a multiple of C1/r = " + std::to_string(reduced));
  }
}

template <typename T>
void check_aw_kernels(const Tensor<T>& input, const Tensor<T>& kernels) {
  if (input.rank() != 4) throw ShapeError("aw_conv2d input must be (N,C1,H,W)");
  if (kernels.rank() != 5) throw ShapeError("aw_conv2d kernels must be (N,C2,C1,h,w)");
  if (kernels.extent(0) != input.extent(0)) {
    throw ShapeError("aw_conv2d kernel batch " + std::to_string(kernels.extent(0)) +
                     " does not match input batch " + std::to_string(input.extent(0)));
  }
  if (kernels.extent(2) != input.extent(1)) {
    throw ShapeError("aw_conv2d kernel input channels mismatch");
  }
}

template <typename T>
void kaiming_fill(Tensor<T>& w, int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal() * stddev);
}

}  // namespace

template <typename T>
AwConvLayer<T> AwConvLayer<T>::create(int64_t in_ch, int64_t out_ch, int64_t kernel,
                                      int64_t stride, int64_t padding, AttentionConfig cfg,
                                      Rng& rng) {
  AwConvLayer<T> layer;
  const int64_t c1_ratio = cfg.c1_ratio == 0 ? in_ch : cfg.c1_ratio;
  if (c1_ratio < 1 || in_ch % c1_ratio != 0) {
    throw ShapeError("attention c1_ratio must divide the input channels");
  }
  const int64_t mid = attention_mid_channels(in_ch, cfg.reduction);
  const int64_t pc2_out = out_ch * (in_ch / c1_ratio);
  layer.weight = Tensor<T>({out_ch, in_ch, kernel, kernel});
  layer.pc1_weight = Tensor<T>({mid, in_ch, 1, 1});
  layer.pc2_weight = Tensor<T>({pc2_out, mid, 1, 1});
  layer.bn1 = BatchNormState<T>(mid);
  layer.bn2 = BatchNormState<T>(pc2_out);
  layer.stride = stride;
  layer.padding = padding;
  layer.c1_ratio = c1_ratio;
  layer.reduction = cfg.reduction;
  kaiming_fill(layer.weight, in_ch * kernel * kernel, rng);
  kaiming_fill(layer.pc1_weight, in_ch, rng);
  kaiming_fill(layer.pc2_weight, mid, rng);
  return layer;
}

template <typename T>
Tensor<T> expand_c1(const Tensor<T>& a2, int64_t c1, int64_t c1_ratio) {
  check_expand_args(a2.shape(), c1, c1_ratio);
  const int64_t batch = a2.extent(0);
  const int64_t reduced = c1 / c1_ratio;
  const int64_t c2 = a2.extent(1) / reduced;
  const int64_t h = a2.extent(2), w = a2.extent(3);
  return a2.reshape({batch, c2, reduced, h, w})
      .unsqueeze(3)
      .expand({batch, c2, reduced, c1_ratio, h, w})
      .reshape({batch, c2, c1, h, w});
}

template <typename T>
Node<T> expand_c1(Node<T> a2, int64_t c1, int64_t c1_ratio) {
  check_expand_args(a2.value().shape(), c1, c1_ratio);
  const int64_t batch = a2.value().extent(0);
  const int64_t reduced = c1 / c1_ratio;
  const int64_t c2 = a2.value().extent(1) / reduced;
  const int64_t h = a2.value().extent(2), w = a2.value().extent(3);
  Node<T> r = ad::reshape(a2, {batch, c2, reduced, h, w});
  r = ad::unsqueeze(r, 3);
  r = ad::expand(r, {batch, c2, reduced, c1_ratio, h, w});
  return ad::reshape(r, {batch, c2, c1, h, w});
}

template <typename T>
Tensor<T> attentional_weights(const Tensor<T>& maps, const Tensor<T>& weight) {
  if (maps.rank() != 5 || weight.rank() != 4) {
    throw ShapeError("attentional_weights expects maps (N,C2,C1,h,w) and weight (C2,C1,h,w)");
  }
  for (int64_t d = 0; d < 4; ++d) {
    if (maps.extent(d + 1) != weight.extent(d)) {
      throw ShapeError("attention maps " + shape_str(maps.shape()) +
                       " do not match weight " + shape_str(weight.shape()));
    }
  }
  return add(weight, hadamard(maps, weight));
}

template <typename T>
Node<T> attentional_weights(Node<T> maps, Node<T> weight) {
  if (maps.value().rank() != 5 || weight.value().rank() != 4) {
    throw ShapeError("attentional_weights expects maps (N,C2,C1,h,w) and weight (C2,C1,h,w)");
  }
  return ad::add(weight, ad::hadamard(maps, weight));
}

template <typename T>
Tensor<T> aw_conv2d(const Tensor<T>& input, const Tensor<T>& kernels, int64_t stride,
                    int64_t padding) {
  check_aw_kernels(input, kernels);
  const int64_t batch = input.extent(0), c1 = input.extent(1);
  const int64_t c2 = kernels.extent(1), kh = kernels.extent(3), kw = kernels.extent(4);
  // One grouped convolution, one group per sample.
  Tensor<T> flat_in = input.reshape({1, batch * c1, input.extent(2), input.extent(3)});
  Tensor<T> flat_k = kernels.reshape({batch * c2, c1, kh, kw});
  Tensor<T> out = nn::conv2d<T>(flat_in, flat_k, nullptr, stride, padding, batch);
  return out.reshape({batch, c2, out.extent(2), out.extent(3)});
}

template <typename T>
Node<T> aw_conv2d(Node<T> input, Node<T> kernels, int64_t stride, int64_t padding) {
  check_aw_kernels(input.value(), kernels.value());
  const Tensor<T>& iv = input.value();
  const Tensor<T>& kv = kernels.value();
  const int64_t batch = iv.extent(0), c1 = iv.extent(1);
  const int64_t c2 = kv.extent(1), kh = kv.extent(3), kw = kv.extent(4);
  Node<T> flat_in = ad::reshape(input, {1, batch * c1, iv.extent(2), iv.extent(3)});
  Node<T> flat_k = ad::reshape(kernels, {batch * c2, c1, kh, kw});
  Node<T> out = nn::conv2d(flat_in, flat_k, stride, padding, batch);
  const Tensor<T>& ov = out.value();
  return ad::reshape(out, {batch, c2, ov.extent(2), ov.extent(3)});
}

template <typename T>
Tensor<T> aw_conv2d_per_sample(const Tensor<T>& input, const Tensor<T>& kernels, int64_t stride,
                               int64_t padding) {
  check_aw_kernels(input, kernels);
  const int64_t batch = input.extent(0), c1 = input.extent(1);
  const int64_t h = input.extent(2), w = input.extent(3);
  const int64_t c2 = kernels.extent(1), kh = kernels.extent(3), kw = kernels.extent(4);
  const int64_t sample_in = c1 * h * w;
  const int64_t sample_k = c2 * c1 * kh * kw;
  Tensor<T> out;
  for (int64_t l = 0; l < batch; ++l) {
    Tensor<T> in_l({1, c1, h, w},
                   std::vector<T>(input.data() + l * sample_in, input.data() + (l + 1) * sample_in));
    Tensor<T> k_l({c2, c1, kh, kw},
                  std::vector<T>(kernels.data() + l * sample_k, kernels.data() + (l + 1) * sample_k));
    Tensor<T> o_l = nn::conv2d<T>(in_l, k_l, nullptr, stride, padding, 1);
    if (l == 0) out = Tensor<T>({batch, c2, o_l.extent(2), o_l.extent(3)});
    std::copy(o_l.data(), o_l.data() + o_l.numel(), out.data() + l * o_l.numel());
  }
  return out;
}

template <typename T>
Tensor<T> compute_attention(const Tensor<T>& input, const AwConvLayer<T>& layer) {
  const int64_t kh = layer.kernel_h(), kw = layer.kernel_w();
  Tensor<T> a0 = nn::adaptive_avgpool2d(input, kh, kw);
  Tensor<T> x = nn::conv2d<T>(a0, layer.pc1_weight, nullptr, 1, 0, 1);
  Tensor<T> rm1 = layer.bn1.running_mean, rv1 = layer.bn1.running_var;
  x = nn::batchnorm2d(x, layer.bn1.gamma, layer.bn1.beta, rm1, rv1, false, layer.bn1.momentum,
                      layer.bn1.eps);
  x = nn::relu(x);
  x = nn::conv2d<T>(x, layer.pc2_weight, nullptr, 1, 0, 1);
  Tensor<T> rm2 = layer.bn2.running_mean, rv2 = layer.bn2.running_var;
  x = nn::batchnorm2d(x, layer.bn2.gamma, layer.bn2.beta, rm2, rv2, false, layer.bn2.momentum,
                      layer.bn2.eps);
  x = nn::sigmoid(x);
  return expand_c1(x, layer.in_channels(), layer.c1_ratio);
}

template <typename T>
Tensor<T> aw_layer_forward(const Tensor<T>& input, const AwConvLayer<T>& layer) {
  const Shape maps_shape{input.extent(0), layer.out_channels(), layer.in_channels(),
                         layer.kernel_h(), layer.kernel_w()};
  Tensor<T> maps = layer.injected_attention.has_value()
                       ? broadcast_to(*layer.injected_attention, maps_shape)
                       : compute_attention(input, layer);
  Tensor<T> ak = attentional_weights(maps, layer.weight);
  return aw_conv2d(input, ak, layer.stride, layer.padding);
}

template <typename T>
AwConvNodes<T> bind_aw_layer(Tape<T>& tape, AwConvLayer<T>& layer, bool requires_grad) {
  AwConvNodes<T> nodes;
  nodes.weight = tape.leaf(layer.weight, requires_grad);
  nodes.pc1_weight = tape.leaf(layer.pc1_weight, requires_grad);
  nodes.bn1_gamma = tape.leaf(layer.bn1.gamma, requires_grad);
  nodes.bn1_beta = tape.leaf(layer.bn1.beta, requires_grad);
  nodes.pc2_weight = tape.leaf(layer.pc2_weight, requires_grad);
  nodes.bn2_gamma = tape.leaf(layer.bn2.gamma, requires_grad);
  nodes.bn2_beta = tape.leaf(layer.bn2.beta, requires_grad);
  nodes.bn1_mean = &layer.bn1.running_mean;
  nodes.bn1_var = &layer.bn1.running_var;
  nodes.bn2_mean = &layer.bn2.running_mean;
  nodes.bn2_var = &layer.bn2.running_var;
  nodes.bn_momentum = layer.bn1.momentum;
  nodes.bn_eps = layer.bn1.eps;
  nodes.stride = layer.stride;
  nodes.padding = layer.padding;
  nodes.c1_ratio = layer.c1_ratio;
  nodes.injected_attention =
      layer.injected_attention.has_value() ? &*layer.injected_attention : nullptr;
  return nodes;
}

template <typename T>
Node<T> compute_attention(Node<T> input, const AwConvNodes<T>& layer, bool training) {
  const Tensor<T>& wv = layer.weight.value();
  const int64_t c1 = wv.extent(1), kh = wv.extent(2), kw = wv.extent(3);
  Node<T> a0 = nn::adaptive_avgpool2d(input, kh, kw);
  Node<T> x = nn::conv2d(a0, layer.pc1_weight, 1, 0, 1);
  x = nn::batchnorm2d(x, layer.bn1_gamma, layer.bn1_beta, *layer.bn1_mean, *layer.bn1_var,
                      training, layer.bn_momentum, layer.bn_eps);
  x = nn::relu(x);
  x = nn::conv2d(x, layer.pc2_weight, 1, 0, 1);
  x = nn::batchnorm2d(x, layer.bn2_gamma, layer.bn2_beta, *layer.bn2_mean, *layer.bn2_var,
                      training, layer.bn_momentum, layer.bn_eps);
  x = nn::sigmoid(x);
  return expand_c1(x, c1, layer.c1_ratio);
}

template <typename T>
Node<T> aw_layer_forward(Node<T> input, const AwConvNodes<T>& layer, bool training) {
  Tape<T>& tape = *input.tape();
  const Tensor<T>& wv = layer.weight.value();
  Node<T> maps;
  if (layer.injected_attention != nullptr) {
    const Shape maps_shape{input.value().extent(0), wv.extent(0), wv.extent(1), wv.extent(2),
                           wv.extent(3)};
    maps = ad::constant(tape, broadcast_to(*layer.injected_attention, maps_shape));
  } else {
    maps = compute_attention(input, layer, training);
  }
  Node<T> ak = attentional_weights(maps, layer.weight);
  return aw_conv2d(input, ak, layer.stride, layer.padding);
}

#define AWCONV_INSTANTIATE_AW(T)                                                             \
  template struct AwConvLayer<T>;                                                           \
  template Tensor<T> expand_c1<T>(const Tensor<T>&, int64_t, int64_t);                      \
  template Node<T> expand_c1<T>(Node<T>, int64_t, int64_t);                                 \
  template Tensor<T> attentional_weights<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Node<T> attentional_weights<T>(Node<T>, Node<T>);                                \
  template Tensor<T> aw_conv2d<T>(const Tensor<T>&, const Tensor<T>&, int64_t, int64_t);    \
  template Node<T> aw_conv2d<T>(Node<T>, Node<T>, int64_t, int64_t);                        \
  template Tensor<T> aw_conv2d_per_sample<T>(const Tensor<T>&, const Tensor<T>&, int64_t,   \
                                             int64_t);                                      \
  template Tensor<T> compute_attention<T>(const Tensor<T>&, const AwConvLayer<T>&);         \
  template Tensor<T> aw_layer_forward<T>(const Tensor<T>&, const AwConvLayer<T>&);          \
  template AwConvNodes<T> bind_aw_layer<T>(Tape<T>&, AwConvLayer<T>&, bool);                \
  template Node<T> compute_attention<T>(Node<T>, const AwConvNodes<T>&, bool);              \
  template Node<T> aw_layer_forward<T>(Node<T>, const AwConvNodes<T>&, bool);

AWCONV_INSTANTIATE_AW(float)
AWCONV_INSTANTIATE_AW(double)

}  // namespace awconv
