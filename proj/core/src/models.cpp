#include "awconv/models.hpp"

#include <algorithm>
#include <cmath>

#include "awconv/errors.hpp"
#include "awconv/rng.hpp"

namespace awconv {

Attention parse_attention(const std::string& s) {
  std::string v = s;
  std::replace(v.begin(), v.end(), '_', '-');
  if (v == "none") return Attention::none;
  if (v == "aw") return Attention::aw;
  if (v == "se") return Attention::se;
  if (v == "cbam") return Attention::cbam;
  if (v == "aw-se") return Attention::aw_se;
  if (v == "aw-cbam") return Attention::aw_cbam;
  throw UsageError("unknown attention variant '" + s +
                   "' (expected none|aw|se|cbam|aw-se|aw-cbam)");
}

const char* attention_name(Attention a) {
  switch (a) {
    case Attention::none: return "none";
    case Attention::aw: return "aw";
    case Attention::se: return "se";
    case Attention::cbam: return "cbam";
    case Attention::aw_se: return "aw-se";
    case Attention::aw_cbam: return "aw-cbam";
  }
  return "?";
}

namespace {

bool wants_aw(Attention a) {
  return a == Attention::aw || a == Attention::aw_se || a == Attention::aw_cbam;
}
bool wants_se(Attention a) { return a == Attention::se || a == Attention::aw_se; }
bool wants_cbam(Attention a) { return a == Attention::cbam || a == Attention::aw_cbam; }

int32_t append(LayerGraph& g, LayerSpec spec) {
  g.layers.push_back(std::move(spec));
  return static_cast<int32_t>(g.layers.size() - 1);
}

int32_t add_conv(LayerGraph& g, const std::string& name, int32_t input, int64_t in_ch,
                 int64_t out_ch, int64_t kernel, int64_t stride, int64_t padding,
                 int64_t groups = 1, bool bias = false) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::conv;
  s.inputs = {input};
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.groups = groups;
  s.bias = bias;
  return append(g, std::move(s));
}

int32_t add_aw_conv(LayerGraph& g, const std::string& name, int32_t input, int64_t in_ch,
                    int64_t out_ch, int64_t kernel, int64_t stride, int64_t padding) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::aw_conv;
  s.inputs = {input};
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.reduction = 16;
  s.c1_ratio = in_ch;
  return append(g, std::move(s));
}

int32_t add_bn(LayerGraph& g, const std::string& name, int32_t input, int64_t channels) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::batchnorm;
  s.inputs = {input};
  s.channels = channels;
  return append(g, std::move(s));
}

int32_t add_relu(LayerGraph& g, const std::string& name, int32_t input) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::relu;
  s.inputs = {input};
  return append(g, std::move(s));
}

int32_t add_gate(LayerGraph& g, const std::string& name, int32_t input, int64_t channels,
                 bool cbam, CbamVariant variant) {
  LayerSpec s;
  s.name = name;
  s.kind = cbam ? LayerKind::cbam_gate : LayerKind::se_gate;
  s.inputs = {input};
  s.channels = channels;
  s.reduction = 16;
  s.cbam_variant = variant;
  return append(g, std::move(s));
}

int32_t add_add(LayerGraph& g, const std::string& name, int32_t a, int32_t b) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::add;
  s.inputs = {a, b};
  return append(g, std::move(s));
}

int32_t add_head(LayerGraph& g, int64_t in_features, int64_t classes) {
  LayerSpec gap;
  gap.name = "head.pool";
  gap.kind = LayerKind::global_avgpool;
  gap.inputs = {static_cast<int32_t>(g.layers.size() - 1)};
  int32_t cur = append(g, std::move(gap));
  LayerSpec fl;
  fl.name = "head.flatten";
  fl.kind = LayerKind::flatten;
  fl.inputs = {cur};
  cur = append(g, std::move(fl));
  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::linear;
  fc.inputs = {cur};
  fc.in_features = in_features;
  fc.out_features = classes;
  fc.bias = true;
  return append(g, std::move(fc));
}

int32_t add_shortcut(LayerGraph& g, const std::string& prefix, int32_t block_input,
                     const BlockSpec& spec) {
  if (spec.in_ch == spec.out_ch && spec.stride == 1) return block_input;
  int32_t sc = add_conv(g, prefix + ".downsample.conv", block_input, spec.in_ch, spec.out_ch, 1,
                        spec.stride, 0);
  return add_bn(g, prefix + ".downsample.bn", sc, spec.out_ch);
}

int32_t finish_block(LayerGraph& g, const std::string& prefix, int32_t main_path,
                     int32_t block_input, const BlockSpec& spec) {
  int32_t cur = main_path;
  if (wants_se(spec.attention)) {
    cur = add_gate(g, prefix + ".se", cur, spec.out_ch, false, spec.cbam_variant);
  } else if (wants_cbam(spec.attention)) {
    cur = add_gate(g, prefix + ".cbam", cur, spec.out_ch, true, spec.cbam_variant);
  }
  int32_t sc = add_shortcut(g, prefix, block_input, spec);
  cur = add_add(g, prefix + ".add", cur, sc);
  return add_relu(g, prefix + ".out", cur);
}

}  // namespace

int32_t append_bottleneck(LayerGraph& g, const BlockSpec& spec, const std::string& prefix,
                          int32_t input) {
  if (spec.out_ch != 4 * spec.mid_ch) {
    throw UsageError("bottleneck expansion must be 4x: mid=" + std::to_string(spec.mid_ch) +
                     " out=" + std::to_string(spec.out_ch));
  }
  // Downsampling stride sits on the first 1x1 convolution; the 3x3 (and any
  // AW replacement of it) always runs at stride 1.
  int32_t cur = add_conv(g, prefix + ".conv1", input, spec.in_ch, spec.mid_ch, 1, spec.stride, 0);
  cur = add_bn(g, prefix + ".bn1", cur, spec.mid_ch);
  cur = add_relu(g, prefix + ".relu1", cur);
  cur = wants_aw(spec.attention)
            ? add_aw_conv(g, prefix + ".conv2", cur, spec.mid_ch, spec.mid_ch, 3, 1, 1)
            : add_conv(g, prefix + ".conv2", cur, spec.mid_ch, spec.mid_ch, 3, 1, 1);
  cur = add_bn(g, prefix + ".bn2", cur, spec.mid_ch);
  cur = add_relu(g, prefix + ".relu2", cur);
  cur = add_conv(g, prefix + ".conv3", cur, spec.mid_ch, spec.out_ch, 1, 1, 0);
  cur = add_bn(g, prefix + ".bn3", cur, spec.out_ch);
  return finish_block(g, prefix, cur, input, spec);
}

int32_t append_basic_block(LayerGraph& g, const BlockSpec& spec, const std::string& prefix,
                           int32_t input) {
  int32_t cur =
      add_conv(g, prefix + ".conv1", input, spec.in_ch, spec.out_ch, 3, spec.stride, 1);
  cur = add_bn(g, prefix + ".bn1", cur, spec.out_ch);
  cur = add_relu(g, prefix + ".relu1", cur);
  cur = wants_aw(spec.attention)
            ? add_aw_conv(g, prefix + ".conv2", cur, spec.out_ch, spec.out_ch, 3, 1, 1)
            : add_conv(g, prefix + ".conv2", cur, spec.out_ch, spec.out_ch, 3, 1, 1);
  cur = add_bn(g, prefix + ".bn2", cur, spec.out_ch);
  return finish_block(g, prefix, cur, input, spec);
}

LayerGraph build_resnet(int depth, Stem stem, int64_t classes, Attention attention) {
  std::vector<int> block_counts;
  if (depth == 50) {
    block_counts = {3, 4, 6, 3};
  } else if (depth == 101) {
    block_counts = {3, 4, 23, 3};
  } else {
    throw UsageError("unsupported resnet depth " + std::to_string(depth));
  }
  LayerGraph g;
  g.arch = "resnet" + std::to_string(depth) + (stem == Stem::cifar ? "-cifar" : "");
  g.attention = attention_name(attention);
  g.input_channels = 3;
  g.default_hw = stem == Stem::imagenet ? 224 : 32;
  g.classes = classes;

  int32_t cur;
  if (stem == Stem::imagenet) {
    cur = add_conv(g, "stem.conv", -1, 3, 64, 7, 2, 3);
    cur = add_bn(g, "stem.bn", cur, 64);
    cur = add_relu(g, "stem.relu", cur);
    LayerSpec mp;
    mp.name = "stem.pool";
    mp.kind = LayerKind::maxpool;
    mp.inputs = {cur};
    mp.kernel = 3;
    mp.stride = 2;
    mp.padding = 1;
    cur = append(g, std::move(mp));
  } else {
    cur = add_conv(g, "stem.conv", -1, 3, 64, 3, 1, 1);
    cur = add_bn(g, "stem.bn", cur, 64);
    cur = add_relu(g, "stem.relu", cur);
  }

  const int64_t mids[4] = {64, 128, 256, 512};
  int64_t in_ch = 64;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < block_counts[static_cast<size_t>(s)]; ++b) {
      BlockSpec spec;
      spec.in_ch = in_ch;
      spec.mid_ch = mids[s];
      spec.out_ch = mids[s] * 4;
      spec.stride = (s > 0 && b == 0) ? 2 : 1;
      spec.attention = attention;
      cur = append_bottleneck(g, spec, "layer" + std::to_string(s + 1) + "." + std::to_string(b),
                              cur);
      in_ch = mids[s] * 4;
    }
  }
  add_head(g, 2048, classes);
  return g;
}

LayerGraph build_mobilenet(int64_t classes, Attention attention) {
  if (attention != Attention::none && attention != Attention::aw) {
    throw UsageError("mobilenet supports attention none|aw");
  }
  LayerGraph g;
  g.arch = "mobilenet";
  g.attention = attention_name(attention);
  g.input_channels = 3;
  g.default_hw = 224;
  g.classes = classes;

  int32_t cur = add_conv(g, "stem.conv", -1, 3, 32, 3, 2, 1);
  cur = add_bn(g, "stem.bn", cur, 32);
  cur = add_relu(g, "stem.relu", cur);

  struct Sep {
    int64_t in, out, stride;
  };
  const Sep blocks[] = {{32, 64, 1},    {64, 128, 2},  {128, 128, 1}, {128, 256, 2},
                        {256, 256, 1},  {256, 512, 2}, {512, 512, 1}, {512, 512, 1},
                        {512, 512, 1},  {512, 512, 1}, {512, 512, 1}, {512, 1024, 2},
                        {1024, 1024, 1}};
  int idx = 0;
  for (const Sep& s : blocks) {
    ++idx;
    const std::string prefix = "block" + std::to_string(idx);
    cur = add_conv(g, prefix + ".dw", cur, s.in, s.in, 3, s.stride, 1, s.in);
    cur = add_bn(g, prefix + ".dw_bn", cur, s.in);
    cur = add_relu(g, prefix + ".dw_relu", cur);
    // AW replaces the pointwise convolution of every second separable block.
    const bool aw_here = attention == Attention::aw && idx % 2 == 0;
    cur = aw_here ? add_aw_conv(g, prefix + ".pw", cur, s.in, s.out, 1, 1, 0)
                  : add_conv(g, prefix + ".pw", cur, s.in, s.out, 1, 1, 0);
    cur = add_bn(g, prefix + ".pw_bn", cur, s.out);
    cur = add_relu(g, prefix + ".pw_relu", cur);
  }
  add_head(g, 1024, classes);
  return g;
}

LayerGraph build_tiny_resnet(int64_t classes, Attention attention) {
  LayerGraph g;
  g.arch = "tiny";
  g.attention = attention_name(attention);
  g.input_channels = 3;
  g.default_hw = 32;
  g.classes = classes;

  int32_t cur = add_conv(g, "stem.conv", -1, 3, 16, 3, 1, 1);
  cur = add_bn(g, "stem.bn", cur, 16);
  cur = add_relu(g, "stem.relu", cur);

  const int64_t widths[3] = {16, 32, 64};
  int64_t in_ch = 16;
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < 2; ++b) {
      BlockSpec spec;
      spec.in_ch = in_ch;
      spec.mid_ch = widths[s];
      spec.out_ch = widths[s];
      spec.stride = (s > 0 && b == 0) ? 2 : 1;
      spec.attention = attention;
      cur = append_basic_block(g, spec, "layer" + std::to_string(s + 1) + "." + std::to_string(b),
                               cur);
      in_ch = widths[s];
    }
  }
  add_head(g, 64, classes);
  return g;
}

LayerGraph build_arch(const std::string& arch, Attention attention, int64_t classes) {
  if (arch == "resnet50") return build_resnet(50, Stem::imagenet, classes < 0 ? 1000 : classes, attention);
  if (arch == "resnet101") return build_resnet(101, Stem::imagenet, classes < 0 ? 1000 : classes, attention);
  if (arch == "resnet50-cifar") return build_resnet(50, Stem::cifar, classes < 0 ? 100 : classes, attention);
  if (arch == "mobilenet") return build_mobilenet(classes < 0 ? 1000 : classes, attention);
  if (arch == "tiny") return build_tiny_resnet(classes < 0 ? 3 : classes, attention);
  throw UsageError("unknown architecture '" + arch +
                   "' (expected resnet50|resnet101|resnet50-cifar|mobilenet|tiny)");
}

// ---- Model ----

namespace {

template <typename T>
void kaiming_init(Tensor<T>& w, int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal() * stddev);
}

}  // namespace

template <typename T>
Model<T>::Model(LayerGraph graph, uint64_t seed) : graph_(std::move(graph)) {
  register_layers(seed);
}

template <typename T>
void Model<T>::register_layers(uint64_t seed) {
  slots_.resize(graph_.layers.size());

  auto add_param = [&](Slots& s, const std::string& name, Tensor<T> value, bool decay) {
    params_.push_back(Entry{name, std::move(value), decay});
    s.p.push_back(static_cast<int32_t>(params_.size() - 1));
  };
  auto add_buffer = [&](Slots& s, const std::string& name, Tensor<T> value) {
    buffers_.push_back(Entry{name, std::move(value), false});
    s.b.push_back(static_cast<int32_t>(buffers_.size() - 1));
  };
  // Each tensor draws from its own stream keyed by name, so shared layers
  // initialize identically across attention variants.
  auto kaiming = [&](const std::string& name, Shape shape, int64_t fan_in) {
    Tensor<T> t(std::move(shape));
    Rng rng(seed ^ fnv1a64(name));
    kaiming_init(t, fan_in, rng);
    return t;
  };
  auto add_bn_set = [&](Slots& s, const std::string& prefix, int64_t c) {
    add_param(s, prefix + ".gamma", Tensor<T>::full({c}, T(1)), false);
    add_param(s, prefix + ".beta", Tensor<T>::zeros({c}), false);
    add_buffer(s, prefix + ".running_mean", Tensor<T>::zeros({c}));
    add_buffer(s, prefix + ".running_var", Tensor<T>::full({c}, T(1)));
  };

  for (size_t i = 0; i < graph_.layers.size(); ++i) {
    const LayerSpec& L = graph_.layers[i];
    Slots& s = slots_[i];
    switch (L.kind) {
      case LayerKind::conv: {
        const int64_t in_g = L.in_ch / L.groups;
        add_param(s, L.name + ".weight",
                  kaiming(L.name + ".weight", {L.out_ch, in_g, L.kernel, L.kernel},
                          in_g * L.kernel * L.kernel),
                  true);
        if (L.bias) add_param(s, L.name + ".bias", Tensor<T>::zeros({L.out_ch}), false);
        break;
      }
      case LayerKind::batchnorm:
        add_bn_set(s, L.name, L.channels);
        break;
      case LayerKind::linear:
        add_param(s, L.name + ".weight",
                  kaiming(L.name + ".weight", {L.out_features, L.in_features}, L.in_features),
                  true);
        add_param(s, L.name + ".bias", Tensor<T>::zeros({L.out_features}), false);
        break;
      case LayerKind::aw_conv: {
        const int64_t c1_ratio = L.c1_ratio == 0 ? L.in_ch : L.c1_ratio;
        const int64_t mid = attention_mid_channels(L.in_ch, L.reduction);
        const int64_t pc2_out = L.out_ch * (L.in_ch / c1_ratio);
        add_param(s, L.name + ".weight",
                  kaiming(L.name + ".weight", {L.out_ch, L.in_ch, L.kernel, L.kernel},
                          L.in_ch * L.kernel * L.kernel),
                  true);
        add_param(s, L.name + ".attn.pc1.weight",
                  kaiming(L.name + ".attn.pc1.weight", {mid, L.in_ch, 1, 1}, L.in_ch), true);
        add_param(s, L.name + ".attn.bn1.gamma", Tensor<T>::full({mid}, T(1)), false);
        add_param(s, L.name + ".attn.bn1.beta", Tensor<T>::zeros({mid}), false);
        add_param(s, L.name + ".attn.pc2.weight",
                  kaiming(L.name + ".attn.pc2.weight", {pc2_out, mid, 1, 1}, mid), true);
        add_param(s, L.name + ".attn.bn2.gamma", Tensor<T>::full({pc2_out}, T(1)), false);
        add_param(s, L.name + ".attn.bn2.beta", Tensor<T>::zeros({pc2_out}), false);
        add_buffer(s, L.name + ".attn.bn1.running_mean", Tensor<T>::zeros({mid}));
        add_buffer(s, L.name + ".attn.bn1.running_var", Tensor<T>::full({mid}, T(1)));
        add_buffer(s, L.name + ".attn.bn2.running_mean", Tensor<T>::zeros({pc2_out}));
        add_buffer(s, L.name + ".attn.bn2.running_var", Tensor<T>::full({pc2_out}, T(1)));
        break;
      }
      case LayerKind::se_gate:
      case LayerKind::cbam_gate: {
        const int64_t mid = std::max<int64_t>(L.channels / L.reduction, 1);
        add_param(s, L.name + ".fc1.weight",
                  kaiming(L.name + ".fc1.weight", {mid, L.channels}, L.channels), true);
        add_param(s, L.name + ".fc1.bias", Tensor<T>::zeros({mid}), false);
        add_param(s, L.name + ".fc2.weight",
                  kaiming(L.name + ".fc2.weight", {L.channels, mid}, mid), true);
        add_param(s, L.name + ".fc2.bias", Tensor<T>::zeros({L.channels}), false);
        if (L.kind == LayerKind::cbam_gate && L.cbam_variant != CbamVariant::maxpool) {
          add_param(s, L.name + ".spatial.weight",
                    kaiming(L.name + ".spatial.weight", {1, 2, 7, 7}, 2 * 7 * 7), true);
          add_param(s, L.name + ".spatial.bn.gamma", Tensor<T>::full({1}, T(1)), false);
          add_param(s, L.name + ".spatial.bn.beta", Tensor<T>::zeros({1}), false);
          add_buffer(s, L.name + ".spatial.bn.running_mean", Tensor<T>::zeros({1}));
          add_buffer(s, L.name + ".spatial.bn.running_var", Tensor<T>::full({1}, T(1)));
        }
        break;
      }
      case LayerKind::relu:
      case LayerKind::maxpool:
      case LayerKind::global_avgpool:
      case LayerKind::flatten:
      case LayerKind::add:
        break;
    }
  }
}

template <typename T>
int64_t Model<T>::param_count() const {
  int64_t n = 0;
  for (const Entry& e : params_) n += e.value.numel();
  return n;
}

template <typename T>
typename Model<T>::Entry* Model<T>::find_param(const std::string& name) {
  for (Entry& e : params_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename T>
typename Model<T>::Entry* Model<T>::find_buffer(const std::string& name) {
  for (Entry& e : buffers_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename T>
std::vector<Node<T>> Model<T>::bind_params(Tape<T>& tape, bool requires_grad) const {
  std::vector<Node<T>> nodes;
  nodes.reserve(params_.size());
  for (const Entry& e : params_) nodes.push_back(tape.leaf(e.value, requires_grad));
  return nodes;
}

template <typename T>
Node<T> Model<T>::forward(Tape<T>& tape, std::span<const Node<T>> pn, const Tensor<T>& images,
                          bool training, const ForwardHooks<T>* hooks) {
  if (pn.size() != params_.size()) {
    throw UsageError("forward expects " + std::to_string(params_.size()) + " parameter nodes");
  }
  if (images.rank() != 4 || images.extent(1) != graph_.input_channels) {
    throw ShapeError("model input must be (N," + std::to_string(graph_.input_channels) +
                     ",H,W), got " + shape_str(images.shape()));
  }
  const Tensor<T> zero_maps = Tensor<T>::zeros({1});
  Node<T> input_node = ad::constant(tape, images);
  std::vector<Node<T>> outs(graph_.layers.size());
  auto src = [&](size_t i, size_t which) -> Node<T> {
    const int32_t idx = graph_.layers[i].inputs[which];
    return idx < 0 ? input_node : outs[static_cast<size_t>(idx)];
  };

  for (size_t i = 0; i < graph_.layers.size(); ++i) {
    const LayerSpec& L = graph_.layers[i];
    const Slots& s = slots_[i];
    Node<T> x = src(i, 0);
    switch (L.kind) {
      case LayerKind::conv:
        outs[i] = L.bias ? nn::conv2d(x, pn[s.p[0]], pn[s.p[1]], L.stride, L.padding, L.groups)
                         : nn::conv2d(x, pn[s.p[0]], L.stride, L.padding, L.groups);
        break;
      case LayerKind::batchnorm:
        outs[i] = nn::batchnorm2d(x, pn[s.p[0]], pn[s.p[1]], buffers_[s.b[0]].value,
                                  buffers_[s.b[1]].value, training, T(0.1), T(1e-5));
        break;
      case LayerKind::relu:
        outs[i] = nn::relu(x);
        break;
      case LayerKind::maxpool:
        outs[i] = nn::maxpool2d(x, L.kernel, L.stride, L.padding);
        break;
      case LayerKind::global_avgpool:
        outs[i] = nn::global_avgpool(x);
        break;
      case LayerKind::flatten: {
        const Tensor<T>& v = x.value();
        outs[i] = ad::reshape(x, {v.extent(0), v.numel() / v.extent(0)});
        break;
      }
      case LayerKind::linear:
        outs[i] = nn::linear(x, pn[s.p[0]], pn[s.p[1]]);
        break;
      case LayerKind::add:
        outs[i] = ad::add(x, src(i, 1));
        break;
      case LayerKind::aw_conv: {
        AwConvNodes<T> n;
        n.weight = pn[s.p[0]];
        n.pc1_weight = pn[s.p[1]];
        n.bn1_gamma = pn[s.p[2]];
        n.bn1_beta = pn[s.p[3]];
        n.pc2_weight = pn[s.p[4]];
        n.bn2_gamma = pn[s.p[5]];
        n.bn2_beta = pn[s.p[6]];
        n.bn1_mean = &buffers_[s.b[0]].value;
        n.bn1_var = &buffers_[s.b[1]].value;
        n.bn2_mean = &buffers_[s.b[2]].value;
        n.bn2_var = &buffers_[s.b[3]].value;
        n.stride = L.stride;
        n.padding = L.padding;
        n.c1_ratio = L.c1_ratio == 0 ? L.in_ch : L.c1_ratio;
        bool branch_training = training;
        if (hooks != nullptr) {
          if (hooks->injected_attention != nullptr) {
            auto it = hooks->injected_attention->find(L.name);
            if (it != hooks->injected_attention->end()) n.injected_attention = &it->second;
          }
          if (n.injected_attention == nullptr && hooks->zero_attention) {
            n.injected_attention = &zero_maps;
          }
          if (hooks->branch_bn_eval) branch_training = false;
        }
        outs[i] = aw_layer_forward(x, n, branch_training);
        break;
      }
      case LayerKind::se_gate: {
        SeNodes<T> n{pn[s.p[0]], pn[s.p[1]], pn[s.p[2]], pn[s.p[3]]};
        outs[i] = se_forward(x, n);
        break;
      }
      case LayerKind::cbam_gate: {
        CbamNodes<T> n;
        n.mlp = SeNodes<T>{pn[s.p[0]], pn[s.p[1]], pn[s.p[2]], pn[s.p[3]]};
        n.variant = L.cbam_variant;
        if (L.cbam_variant != CbamVariant::maxpool) {
          n.spatial_weight = pn[s.p[4]];
          n.spatial_bn_gamma = pn[s.p[5]];
          n.spatial_bn_beta = pn[s.p[6]];
          n.spatial_bn_mean = &buffers_[s.b[0]].value;
          n.spatial_bn_var = &buffers_[s.b[1]].value;
        }
        outs[i] = cbam_forward(x, n, training);
        break;
      }
    }
  }
  return outs.back();
}

template <typename T>
Node<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& images, bool training,
                          const ForwardHooks<T>* hooks) {
  std::vector<Node<T>> pn = bind_params(tape, false);
  return forward(tape, pn, images, training, hooks);
}

template <typename T>
Tensor<T> Model<T>::forward_eval(const Tensor<T>& images, const ForwardHooks<T>* hooks) {
  Tape<T> tape;
  return forward(tape, images, false, hooks).value();
}

template class Model<float>;
template class Model<double>;

}  // namespace awconv
