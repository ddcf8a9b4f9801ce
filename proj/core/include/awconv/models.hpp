#pragma once

#include <map>
#include <string>
#include <vector>

#include "awconv/attention_zoo.hpp"
#include "awconv/aw_conv.hpp"
#include "awconv/nn_ops.hpp"

namespace awconv {

enum class LayerKind {
  conv,
  batchnorm,
  relu,
  maxpool,
  global_avgpool,
  flatten,
  linear,
  add,
  aw_conv,
  se_gate,
  cbam_gate,
};

// One node of a declarative architecture description. `inputs` reference
// producer layers by index; -1 is the graph input.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::vector<int32_t> inputs;

  int64_t in_ch = 0, out_ch = 0;
  int64_t kernel = 1, stride = 1, padding = 0, groups = 1;
  bool bias = false;
  int64_t channels = 0;                  // batchnorm / gates
  int64_t in_features = 0, out_features = 0;  // linear
  int64_t reduction = 16, c1_ratio = 0;  // attention branch
  CbamVariant cbam_variant = CbamVariant::full;
};

struct LayerGraph {
  std::string arch;
  std::string attention;
  int64_t input_channels = 3;
  int64_t default_hw = 224;
  int64_t classes = 1000;
  std::vector<LayerSpec> layers;
};

enum class Attention { none, aw, se, cbam, aw_se, aw_cbam };

Attention parse_attention(const std::string& s);
const char* attention_name(Attention a);

// Channel plan of one residual block; `mid_ch` is the bottleneck width (equal
// to out_ch for basic blocks).
struct BlockSpec {
  int64_t in_ch = 0, mid_ch = 0, out_ch = 0;
  int64_t stride = 1;
  Attention attention = Attention::none;
  CbamVariant cbam_variant = CbamVariant::full;
};

// Appends one block reading from layer `input`; returns the index of the
// block's output layer. AW variants replace the 3x3 convolution (the second
// 3x3 for basic blocks); SE/CBAM gates sit after the last norm, before the
// residual addition.
int32_t append_bottleneck(LayerGraph& g, const BlockSpec& spec, const std::string& prefix,
                          int32_t input);
int32_t append_basic_block(LayerGraph& g, const BlockSpec& spec, const std::string& prefix,
                           int32_t input);

enum class Stem { imagenet, cifar };

LayerGraph build_resnet(int depth, Stem stem, int64_t classes, Attention attention);
LayerGraph build_mobilenet(int64_t classes, Attention attention);
LayerGraph build_tiny_resnet(int64_t classes, Attention attention);

// arch: resnet50 | resnet101 | resnet50-cifar | mobilenet | tiny.
// classes < 0 picks the architecture's default.
LayerGraph build_arch(const std::string& arch, Attention attention, int64_t classes = -1);

template <typename T>
struct ForwardHooks {
  // Forces A = 0 in every AW layer, making each one a plain convolution.
  bool zero_attention = false;
  // Per-layer attention override, keyed by layer name; broadcast to
  // (N,C2,C1,h,w).
  const std::map<std::string, Tensor<T>>* injected_attention = nullptr;
  // Runs attention-branch batch norm with running statistics even in
  // training mode.
  bool branch_bn_eval = false;
};

// A LayerGraph materialized with named parameters and buffers. Forward
// interprets the graph on a tape; parameters are bound as leaves so the
// caller can read gradients and apply updates between steps.
template <typename T>
class Model {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool decay = false;  // weight-decay eligibility (conv/linear weights only)
  };

  Model(LayerGraph graph, uint64_t seed);

  const LayerGraph& graph() const { return graph_; }
  std::vector<Entry>& params() { return params_; }
  const std::vector<Entry>& params() const { return params_; }
  std::vector<Entry>& buffers() { return buffers_; }
  const std::vector<Entry>& buffers() const { return buffers_; }
  int64_t param_count() const;

  Entry* find_param(const std::string& name);
  Entry* find_buffer(const std::string& name);

  std::vector<Node<T>> bind_params(Tape<T>& tape, bool requires_grad) const;

  // `param_nodes` must align with params() order (e.g. from bind_params or a
  // gradient-check harness).
  Node<T> forward(Tape<T>& tape, std::span<const Node<T>> param_nodes, const Tensor<T>& images,
                  bool training, const ForwardHooks<T>* hooks = nullptr);

  Node<T> forward(Tape<T>& tape, const Tensor<T>& images, bool training,
                  const ForwardHooks<T>* hooks = nullptr);

  // Eval-mode logits without gradient tracking.
  Tensor<T> forward_eval(const Tensor<T>& images, const ForwardHooks<T>* hooks = nullptr);

 private:
  struct Slots {
    std::vector<int32_t> p;  // indices into params_
    std::vector<int32_t> b;  // indices into buffers_
  };

  void register_layers(uint64_t seed);

  LayerGraph graph_;
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
  std::vector<Slots> slots_;
};

}  // namespace awconv
