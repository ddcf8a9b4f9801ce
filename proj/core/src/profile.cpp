#include "awconv/profile.hpp"

#include <algorithm>
#include <cstdio>

#include "awconv/errors.hpp"

namespace awconv {

const char* flop_convention() {
  return "1 MAC = 1 FLOP; element-wise/norm/activation ops at 1 per element; "
         "pooling at 1 per output element; per-sample (N=1)";
}

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_avgpool: return "global_avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::linear: return "linear";
    case LayerKind::add: return "add";
    case LayerKind::aw_conv: return "aw_conv";
    case LayerKind::se_gate: return "se_gate";
    case LayerKind::cbam_gate: return "cbam_gate";
  }
  return "?";
}

struct Dims {
  int64_t c = 0, h = 0, w = 0;
  int64_t elements() const { return c * h * w; }
};

int64_t conv_out(int64_t in, int64_t kernel, int64_t stride, int64_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

int64_t layer_params(const LayerSpec& L) {
  switch (L.kind) {
    case LayerKind::conv: {
      int64_t n = L.out_ch * (L.in_ch / L.groups) * L.kernel * L.kernel;
      if (L.bias) n += L.out_ch;
      return n;
    }
    case LayerKind::batchnorm:
      return 2 * L.channels;
    case LayerKind::linear:
      return L.in_features * L.out_features + L.out_features;
    case LayerKind::aw_conv: {
      const int64_t c1_ratio = L.c1_ratio == 0 ? L.in_ch : L.c1_ratio;
      const int64_t mid = attention_mid_channels(L.in_ch, L.reduction);
      const int64_t pc2_out = L.out_ch * (L.in_ch / c1_ratio);
      return L.out_ch * L.in_ch * L.kernel * L.kernel  // main kernel bank
             + mid * L.in_ch + 2 * mid                 // pointconv1 + bn1
             + pc2_out * mid + 2 * pc2_out;            // pointconv2 + bn2
    }
    case LayerKind::se_gate: {
      const int64_t mid = std::max<int64_t>(L.channels / L.reduction, 1);
      return 2 * mid * L.channels + mid + L.channels;
    }
    case LayerKind::cbam_gate: {
      const int64_t mid = std::max<int64_t>(L.channels / L.reduction, 1);
      int64_t n = 2 * mid * L.channels + mid + L.channels;
      if (L.cbam_variant != CbamVariant::maxpool) n += 2 * 7 * 7 + 2;
      return n;
    }
    default:
      return 0;
  }
}

// FLOPs of one layer at the given input dims; also produces the output dims.
int64_t layer_flops(const LayerSpec& L, const Dims& in, Dims& out) {
  out = in;
  switch (L.kind) {
    case LayerKind::conv: {
      out.c = L.out_ch;
      out.h = conv_out(in.h, L.kernel, L.stride, L.padding);
      out.w = conv_out(in.w, L.kernel, L.stride, L.padding);
      int64_t f = out.elements() * (L.in_ch / L.groups) * L.kernel * L.kernel;
      if (L.bias) f += out.elements();
      return f;
    }
    case LayerKind::batchnorm:
    case LayerKind::relu:
    case LayerKind::add:
      return in.elements();
    case LayerKind::maxpool:
      out.h = conv_out(in.h, L.kernel, L.stride, L.padding);
      out.w = conv_out(in.w, L.kernel, L.stride, L.padding);
      return out.elements();
    case LayerKind::global_avgpool:
      out.h = 1;
      out.w = 1;
      return out.elements();
    case LayerKind::flatten:
      out.c = in.elements();
      out.h = 1;
      out.w = 1;
      return 0;
    case LayerKind::linear:
      out.c = L.out_features;
      out.h = 1;
      out.w = 1;
      return L.in_features * L.out_features + L.out_features;
    case LayerKind::aw_conv: {
      out.c = L.out_ch;
      out.h = conv_out(in.h, L.kernel, L.stride, L.padding);
      out.w = conv_out(in.w, L.kernel, L.stride, L.padding);
      const int64_t c1_ratio = L.c1_ratio == 0 ? L.in_ch : L.c1_ratio;
      const int64_t mid = attention_mid_channels(L.in_ch, L.reduction);
      const int64_t pc2_out = L.out_ch * (L.in_ch / c1_ratio);
      const int64_t khw = L.kernel * L.kernel;
      int64_t f = out.elements() * L.in_ch * khw;  // main conv (per-sample kernels, same MACs)
      f += L.in_ch * khw;                          // adaptive pool to kernel resolution
      f += khw * mid * L.in_ch;                    // pointconv1
      f += 2 * khw * mid;                          // bn1 + relu
      f += khw * pc2_out * mid;                    // pointconv2
      f += 2 * khw * pc2_out;                      // bn2 + sigmoid
      f += L.out_ch * L.in_ch * khw;               // AK = K + A*K element-wise
      return f;
    }
    case LayerKind::se_gate: {
      const int64_t mid = std::max<int64_t>(L.channels / L.reduction, 1);
      int64_t f = L.channels;                     // global average pool
      f += L.channels * mid + mid;                // fc1
      f += mid;                                   // relu
      f += mid * L.channels + L.channels;         // fc2
      f += L.channels;                            // sigmoid
      f += in.elements();                         // rescale
      return f;
    }
    case LayerKind::cbam_gate: {
      const int64_t mid = std::max<int64_t>(L.channels / L.reduction, 1);
      const int64_t mlp = L.channels * mid + mid + mid + mid * L.channels + L.channels;
      const bool use_max = L.cbam_variant != CbamVariant::spatial;
      const bool spatial = L.cbam_variant != CbamVariant::maxpool;
      int64_t f = L.channels + mlp;  // avg descriptor + its MLP pass
      if (use_max) f += L.channels + mlp + L.channels;  // max descriptor, MLP, sum
      f += L.channels;    // sigmoid
      f += in.elements();  // channel rescale
      if (spatial) {
        const int64_t hw = in.h * in.w;
        f += 2 * hw;            // channel-wise avg and max maps
        f += hw * 2 * 7 * 7;    // 7x7 conv over the 2-channel descriptor
        f += 2 * hw;            // bn + sigmoid
        f += in.elements();     // spatial rescale
      }
      return f;
    }
  }
  return 0;
}

ProfileReport profile_graph(const LayerGraph& g, int64_t input_hw, bool with_flops) {
  ProfileReport r;
  r.arch = g.arch;
  r.attention = g.attention;
  r.input_hw = input_hw;
  std::vector<Dims> dims(g.layers.size());
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& L = g.layers[i];
    LayerProfile row;
    row.name = L.name;
    row.kind = kind_name(L.kind);
    row.params = layer_params(L);
    if (with_flops) {
      const int32_t src = L.inputs.empty() ? -1 : L.inputs[0];
      const Dims in = src < 0 ? Dims{g.input_channels, input_hw, input_hw}
                              : dims[static_cast<size_t>(src)];
      Dims out;
      row.flops = layer_flops(L, in, out);
      dims[i] = out;
      row.out_c = out.c;
      row.out_h = out.h;
      row.out_w = out.w;
    }
    r.total_params += row.params;
    r.total_flops += row.flops;
    r.rows.push_back(std::move(row));
  }
  return r;
}

}  // namespace

ProfileReport count_params(const LayerGraph& g) { return profile_graph(g, g.default_hw, false); }

ProfileReport count_flops(const LayerGraph& g, int64_t input_hw) {
  if (input_hw < 1) throw UsageError("input resolution must be >= 1");
  return profile_graph(g, input_hw, true);
}

std::string format_report(const ProfileReport& r, bool with_flops, bool per_layer) {
  char buf[256];
  std::string out;
  out += "# convention: ";
  out += flop_convention();
  out += "\n";
  std::snprintf(buf, sizeof(buf), "arch=%s attention=%s input=%lld\n", r.arch.c_str(),
                r.attention.c_str(), static_cast<long long>(r.input_hw));
  out += buf;
  if (per_layer) {
    std::snprintf(buf, sizeof(buf), "%-28s %-14s %12s %16s\n", "layer", "kind", "params",
                  with_flops ? "flops" : "");
    out += buf;
    for (const LayerProfile& row : r.rows) {
      if (row.params == 0 && row.flops == 0) continue;
      if (with_flops) {
        std::snprintf(buf, sizeof(buf), "%-28s %-14s %12lld %16lld\n", row.name.c_str(),
                      row.kind.c_str(), static_cast<long long>(row.params),
                      static_cast<long long>(row.flops));
      } else {
        std::snprintf(buf, sizeof(buf), "%-28s %-14s %12lld\n", row.name.c_str(),
                      row.kind.c_str(), static_cast<long long>(row.params));
      }
      out += buf;
    }
  }
  std::snprintf(buf, sizeof(buf), "total params: %lld (%.2fM)\n",
                static_cast<long long>(r.total_params),
                static_cast<double>(r.total_params) / 1e6);
  out += buf;
  if (with_flops) {
    std::snprintf(buf, sizeof(buf), "total flops:  %lld (%.3fG)\n",
                  static_cast<long long>(r.total_flops),
                  static_cast<double>(r.total_flops) / 1e9);
    out += buf;
  }
  return out;
}

namespace {

std::string two_decimals(double v, bool floor_toward_zero, const char* suffix) {
  if (floor_toward_zero) v = std::floor(v * 100.0) / 100.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f%s", v, suffix);
  return buf;
}

}  // namespace

std::string millions_str(int64_t count) {
  return two_decimals(static_cast<double>(count) / 1e6, false, "M");
}
std::string giga_str(int64_t count) {
  return two_decimals(static_cast<double>(count) / 1e9, false, "G");
}
std::string millions_floor_str(int64_t count) {
  return two_decimals(static_cast<double>(count) / 1e6, true, "M");
}
std::string giga_floor_str(int64_t count) {
  return two_decimals(static_cast<double>(count) / 1e9, true, "G");
}

std::string format_records(const ProfileReport& r, bool with_flops) {
  char buf[256];
  std::string out;
  for (const LayerProfile& row : r.rows) {
    if (with_flops) {
      std::snprintf(buf, sizeof(buf), "layer=%s kind=%s params=%lld flops=%lld\n",
                    row.name.c_str(), row.kind.c_str(), static_cast<long long>(row.params),
                    static_cast<long long>(row.flops));
    } else {
      std::snprintf(buf, sizeof(buf), "layer=%s kind=%s params=%lld\n", row.name.c_str(),
                    row.kind.c_str(), static_cast<long long>(row.params));
    }
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "total arch=%s attention=%s params=%lld flops=%lld\n",
                r.arch.c_str(), r.attention.c_str(), static_cast<long long>(r.total_params),
                static_cast<long long>(r.total_flops));
  out += buf;
  return out;
}

}  // namespace awconv
