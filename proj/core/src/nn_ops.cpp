#include "awconv/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "awconv/errors.hpp"
#include "awconv/parallel.hpp"

namespace awconv::nn {

namespace {

struct Conv2dGeom {
  int64_t batch, in_ch, in_h, in_w;
  int64_t out_ch, k_h, k_w;
  int64_t groups, in_ch_g, out_ch_g;
  int64_t out_h, out_w;
  int64_t stride, padding;
  int64_t col_rows() const { return in_ch_g * k_h * k_w; }
  int64_t col_cols() const { return out_h * out_w; }
};

template <typename T>
Conv2dGeom conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                         int64_t stride, int64_t padding, int64_t groups) {
  if (input.rank() != 4) throw ShapeError("conv2d input must be (N,C1,H,W)");
  if (weight.rank() != 4) throw ShapeError("conv2d weight must be (C2,C1/groups,h,w)");
  if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d padding must be >= 0");
  if (groups < 1) throw ShapeError("conv2d groups must be >= 1");
  Conv2dGeom g{};
  g.batch = input.extent(0);
  g.in_ch = input.extent(1);
  g.in_h = input.extent(2);
  g.in_w = input.extent(3);
  g.out_ch = weight.extent(0);
  g.k_h = weight.extent(2);
  g.k_w = weight.extent(3);
  g.groups = groups;
  g.stride = stride;
  g.padding = padding;
  if (g.in_ch % groups != 0 || g.out_ch % groups != 0) {
    throw ShapeError("conv2d channels must divide groups: C1=" + std::to_string(g.in_ch) +
                     " C2=" + std::to_string(g.out_ch) + " groups=" + std::to_string(groups));
  }
  g.in_ch_g = g.in_ch / groups;
  g.out_ch_g = g.out_ch / groups;
  if (weight.extent(1) != g.in_ch_g) {
    throw ShapeError("conv2d weight expects " + std::to_string(g.in_ch_g) +
                     " input channels per group, got " + std::to_string(weight.extent(1)));
  }
  if (bias != nullptr && bias->numel() != g.out_ch) {
    throw ShapeError("conv2d bias must have C2 elements");
  }
  g.out_h = (g.in_h + 2 * padding - g.k_h) / stride + 1;
  g.out_w = (g.in_w + 2 * padding - g.k_w) / stride + 1;
  if (g.out_h < 1 || g.out_w < 1) throw ShapeError("conv2d kernel larger than padded input");
  return g;
}

// Unfolds one (sample, group) slice into a (C1g*kh*kw) x (OH*OW) matrix with
// zeros where taps fall outside the input.
template <typename T>
void im2col(const T* in, const Conv2dGeom& g, int64_t sample, int64_t group, T* col) {
  const int64_t hw = g.in_h * g.in_w;
  const T* base = in + (sample * g.in_ch + group * g.in_ch_g) * hw;
  int64_t r = 0;
  for (int64_t o = 0; o < g.in_ch_g; ++o) {
    const T* chan = base + o * hw;
    for (int64_t j = 0; j < g.k_h; ++j) {
      for (int64_t k = 0; k < g.k_w; ++k, ++r) {
        T* dst = col + r * g.col_cols();
        for (int64_t m = 0; m < g.out_h; ++m) {
          const int64_t row = m * g.stride - g.padding + j;
          if (row < 0 || row >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            dst += g.out_w;
            continue;
          }
          const T* src_row = chan + row * g.in_w;
          for (int64_t n = 0; n < g.out_w; ++n) {
            const int64_t cc = n * g.stride - g.padding + k;
            *dst++ = (cc < 0 || cc >= g.in_w) ? T(0) : src_row[cc];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates a column matrix back into the input layout.
template <typename T>
void col2im_acc(const T* col, const Conv2dGeom& g, int64_t sample, int64_t group, T* in_grad) {
  const int64_t hw = g.in_h * g.in_w;
  T* base = in_grad + (sample * g.in_ch + group * g.in_ch_g) * hw;
  int64_t r = 0;
  for (int64_t o = 0; o < g.in_ch_g; ++o) {
    T* chan = base + o * hw;
    for (int64_t j = 0; j < g.k_h; ++j) {
      for (int64_t k = 0; k < g.k_w; ++k, ++r) {
        const T* src = col + r * g.col_cols();
        for (int64_t m = 0; m < g.out_h; ++m) {
          const int64_t row = m * g.stride - g.padding + j;
          if (row < 0 || row >= g.in_h) {
            src += g.out_w;
            continue;
          }
          T* dst_row = chan + row * g.in_w;
          for (int64_t n = 0; n < g.out_w; ++n) {
            const int64_t cc = n * g.stride - g.padding + k;
            if (cc >= 0 && cc < g.in_w) dst_row[cc] += src[n];
          }
          src += g.out_w;
        }
      }
    }
  }
}

inline int64_t bin_lo(int64_t i, int64_t in, int64_t out) { return (i * in) / out; }
inline int64_t bin_hi(int64_t i, int64_t in, int64_t out) { return ((i + 1) * in + out - 1) / out; }

template <typename T>
Tape<T>& same_tape3(Node<T> a, Node<T> b, Node<T> c) {
  if (a.tape() != b.tape() || (c.defined() && c.tape() != a.tape())) {
    throw UsageError("operands live on different tapes");
  }
  return *a.tape();
}

template <typename T>
struct BnStats {
  Tensor<T> mean;     // (C)
  Tensor<T> inv_std;  // (C)
};

template <typename T>
BnStats<T> bn_batch_stats(const Tensor<T>& x, T eps) {
  const int64_t batch = x.extent(0), ch = x.extent(1), hw = x.extent(2) * x.extent(3);
  const int64_t m_count = batch * hw;
  BnStats<T> s{Tensor<T>::zeros({ch}), Tensor<T>::zeros({ch})};
  const T* px = x.data();
  for (int64_t c = 0; c < ch; ++c) {
    T sum = T(0);
    for (int64_t l = 0; l < batch; ++l) {
      const T* xs = px + (l * ch + c) * hw;
      for (int64_t i = 0; i < hw; ++i) sum += xs[i];
    }
    const T mean = sum / static_cast<T>(m_count);
    T var_sum = T(0);
    for (int64_t l = 0; l < batch; ++l) {
      const T* xs = px + (l * ch + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        const T d = xs[i] - mean;
        var_sum += d * d;
      }
    }
    s.mean[c] = mean;
    s.inv_std[c] = T(1) / std::sqrt(var_sum / static_cast<T>(m_count) + eps);
  }
  return s;
}

// Normalizes with the given per-channel statistics, then applies gamma/beta.
template <typename T>
Tensor<T> bn_apply(const Tensor<T>& x, const BnStats<T>& s, const Tensor<T>& gamma,
                   const Tensor<T>& beta) {
  const int64_t batch = x.extent(0), ch = x.extent(1), hw = x.extent(2) * x.extent(3);
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t l = 0; l < batch; ++l) {
    for (int64_t c = 0; c < ch; ++c) {
      const T m = s.mean[c], is = s.inv_std[c], g = gamma[c], b = beta[c];
      const T* xs = px + (l * ch + c) * hw;
      T* os = po + (l * ch + c) * hw;
      for (int64_t i = 0; i < hw; ++i) os[i] = (xs[i] - m) * is * g + b;
    }
  }
  return out;
}

// Training-mode backward through the batch statistics, per channel:
// dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat)).
template <typename T>
void bn_backward(Tape<T>& t, int32_t ix, int32_t ig, int32_t ib, int32_t io, const BnStats<T>& s,
                 bool through_batch_stats) {
  const Tensor<T>& g = t.grad(io);
  const Tensor<T>& xv = t.value(ix);
  const Tensor<T>& gamma = t.value(ig);
  const int64_t batch = xv.extent(0), ch = xv.extent(1), hw = xv.extent(2) * xv.extent(3);
  Tensor<T> dgamma({ch}), dbeta({ch});
  for (int64_t c = 0; c < ch; ++c) {
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (int64_t l = 0; l < batch; ++l) {
      const T* gs = g.data() + (l * ch + c) * hw;
      const T* xs = xv.data() + (l * ch + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        sum_dy += gs[i];
        sum_dy_xhat += gs[i] * (xs[i] - s.mean[c]) * s.inv_std[c];
      }
    }
    dgamma[c] = sum_dy_xhat;
    dbeta[c] = sum_dy;
  }
  if (t.needs_grad(ix)) {
    Tensor<T> gx(xv.shape());
    const T inv_m = T(1) / static_cast<T>(batch * hw);
    for (int64_t c = 0; c < ch; ++c) {
      const T k = gamma[c] * s.inv_std[c];
      const T mean_dy = through_batch_stats ? dbeta[c] * inv_m : T(0);
      const T mean_dy_xhat = through_batch_stats ? dgamma[c] * inv_m : T(0);
      for (int64_t l = 0; l < batch; ++l) {
        const T* gs = g.data() + (l * ch + c) * hw;
        const T* xs = xv.data() + (l * ch + c) * hw;
        T* os = gx.data() + (l * ch + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T xhat = (xs[i] - s.mean[c]) * s.inv_std[c];
          os[i] = k * (gs[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    }
    t.add_grad(ix, gx);
  }
  if (t.needs_grad(ig)) t.add_grad(ig, dgamma);
  if (t.needs_grad(ib)) t.add_grad(ib, dbeta);
}

}  // namespace

// Four-row blocking reuses each B row across four outputs; every C element
// still accumulates over k in ascending order, so results are bit-identical
// to the unblocked loop.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
      const T* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) {
        const T bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Eight independent partial sums break the FMA latency chain; they combine in
// a fixed tree, so results are deterministic (though not the serial sum's).
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T lane[8] = {};
      int64_t kk = 0;
      for (; kk + 8 <= k; kk += 8) {
        for (int l = 0; l < 8; ++l) lane[l] += arow[kk + l] * brow[kk + l];
      }
      T tail = T(0);
      for (; kk < k; ++kk) tail += arow[kk] * brow[kk];
      crow[j] += (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                  ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
                 tail;
    }
  }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int64_t stride, int64_t padding, int64_t groups) {
  const Conv2dGeom g = conv_geometry(input, weight, bias, stride, padding, groups);
  Tensor<T> out({g.batch, g.out_ch, g.out_h, g.out_w});
  const int64_t rows = g.col_rows(), cols = g.col_cols();
  const T* in = input.data();
  const T* w = weight.data();
  T* o = out.data();
  parallel_for(g.batch * g.groups, [&](int64_t lo, int64_t hi) {
    std::vector<T> col(static_cast<size_t>(rows * cols));
    for (int64_t idx = lo; idx < hi; ++idx) {
      const int64_t l = idx / g.groups;
      const int64_t grp = idx % g.groups;
      im2col(in, g, l, grp, col.data());
      T* out_slice = o + (l * g.out_ch + grp * g.out_ch_g) * cols;
      gemm_acc(w + grp * g.out_ch_g * rows, col.data(), out_slice, g.out_ch_g, rows, cols);
    }
  });
  if (bias != nullptr) {
    const T* bv = bias->data();
    for (int64_t l = 0; l < g.batch; ++l) {
      for (int64_t p = 0; p < g.out_ch; ++p) {
        T* slice = o + (l * g.out_ch + p) * cols;
        for (int64_t i = 0; i < cols; ++i) slice[i] += bv[p];
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                     const Tensor<T>& grad_output, int64_t stride, int64_t padding,
                     int64_t groups, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias) {
  const Conv2dGeom g =
      conv_geometry(input, weight, static_cast<const Tensor<T>*>(nullptr), stride, padding, groups);
  if (grad_output.rank() != 4 || grad_output.extent(0) != g.batch ||
      grad_output.extent(1) != g.out_ch || grad_output.extent(2) != g.out_h ||
      grad_output.extent(3) != g.out_w) {
    throw ShapeError("conv2d_backward grad_output shape mismatch");
  }
  const int64_t rows = g.col_rows(), cols = g.col_cols();
  const T* in = input.data();
  const T* go = grad_output.data();

  if (grad_input != nullptr) {
    // Transposed weight per group, (rows x out_ch_g), shared by all samples.
    std::vector<T> wt(static_cast<size_t>(g.groups * rows * g.out_ch_g));
    for (int64_t grp = 0; grp < g.groups; ++grp) {
      const T* wg = weight.data() + grp * g.out_ch_g * rows;
      T* wtg = wt.data() + grp * rows * g.out_ch_g;
      for (int64_t p = 0; p < g.out_ch_g; ++p)
        for (int64_t r = 0; r < rows; ++r) wtg[r * g.out_ch_g + p] = wg[p * rows + r];
    }
    T* gi = grad_input->data();
    parallel_for(g.batch * g.groups, [&](int64_t lo, int64_t hi) {
      std::vector<T> colgrad(static_cast<size_t>(rows * cols));
      for (int64_t idx = lo; idx < hi; ++idx) {
        const int64_t l = idx / g.groups;
        const int64_t grp = idx % g.groups;
        std::fill(colgrad.begin(), colgrad.end(), T(0));
        const T* go_slice = go + (l * g.out_ch + grp * g.out_ch_g) * cols;
        gemm_acc(wt.data() + grp * rows * g.out_ch_g, go_slice, colgrad.data(), rows, g.out_ch_g,
                 cols);
        col2im_acc(colgrad.data(), g, l, grp, gi);
      }
    });
  }

  if (grad_weight != nullptr) {
    // Serial over samples so the accumulation order is fixed.
    std::vector<T> col(static_cast<size_t>(rows * cols));
    T* gw = grad_weight->data();
    for (int64_t l = 0; l < g.batch; ++l) {
      for (int64_t grp = 0; grp < g.groups; ++grp) {
        im2col(in, g, l, grp, col.data());
        const T* go_slice = go + (l * g.out_ch + grp * g.out_ch_g) * cols;
        gemm_nt_acc(go_slice, col.data(), gw + grp * g.out_ch_g * rows, g.out_ch_g, cols, rows);
      }
    }
  }

  if (grad_bias != nullptr) {
    T* gb = grad_bias->data();
    for (int64_t l = 0; l < g.batch; ++l) {
      for (int64_t p = 0; p < g.out_ch; ++p) {
        const T* slice = go + (l * g.out_ch + p) * cols;
        T acc = T(0);
        for (int64_t i = 0; i < cols; ++i) acc += slice[i];
        gb[p] += acc;
      }
    }
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T v = px[i];
    if (v >= T(0)) {
      po[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      po[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> adaptive_avgpool2d(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  if (x.rank() != 4) throw ShapeError("adaptive_avgpool2d input must be (N,C,H,W)");
  if (out_h < 1 || out_w < 1) throw ShapeError("adaptive_avgpool2d output extents must be >= 1");
  const int64_t batch = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
  Tensor<T> out({batch, ch, out_h, out_w});
  const T* px = x.data();
  T* po = out.data();
  int64_t off = 0;
  for (int64_t l = 0; l < batch; ++l) {
    for (int64_t c = 0; c < ch; ++c) {
      const T* plane = px + (l * ch + c) * h * w;
      for (int64_t i = 0; i < out_h; ++i) {
        const int64_t r0 = bin_lo(i, h, out_h), r1 = bin_hi(i, h, out_h);
        for (int64_t j = 0; j < out_w; ++j) {
          const int64_t c0 = bin_lo(j, w, out_w), c1 = bin_hi(j, w, out_w);
          T acc = T(0);
          for (int64_t r = r0; r < r1; ++r)
            for (int64_t cc = c0; cc < c1; ++cc) acc += plane[r * w + cc];
          po[off++] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int64_t kernel, int64_t stride, int64_t padding,
                    std::vector<int64_t>* argmax) {
  if (x.rank() != 4) throw ShapeError("maxpool2d input must be (N,C,H,W)");
  if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel) {
    throw ShapeError("maxpool2d invalid kernel/stride/padding");
  }
  const int64_t batch = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int64_t oh = (h + 2 * padding - kernel) / stride + 1;
  const int64_t ow = (w + 2 * padding - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw ShapeError("maxpool2d kernel larger than padded input");
  Tensor<T> out({batch, ch, oh, ow});
  if (argmax != nullptr) argmax->assign(static_cast<size_t>(out.numel()), -1);
  const T* px = x.data();
  T* po = out.data();
  int64_t off = 0;
  for (int64_t l = 0; l < batch; ++l) {
    for (int64_t c = 0; c < ch; ++c) {
      const int64_t plane = (l * ch + c) * h * w;
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j, ++off) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_idx = -1;
          for (int64_t r = i * stride - padding; r < i * stride - padding + kernel; ++r) {
            if (r < 0 || r >= h) continue;
            for (int64_t cc = j * stride - padding; cc < j * stride - padding + kernel; ++cc) {
              if (cc < 0 || cc >= w) continue;
              const T v = px[plane + r * w + cc];
              if (v > best) {
                best = v;
                best_idx = plane + r * w + cc;
              }
            }
          }
          po[off] = best;
          if (argmax != nullptr) (*argmax)[static_cast<size_t>(off)] = best_idx;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_maxpool(const Tensor<T>& x, std::vector<int64_t>* argmax) {
  if (x.rank() != 4) throw ShapeError("global_maxpool input must be (N,C,H,W)");
  const int64_t batch = x.extent(0), ch = x.extent(1), hw = x.extent(2) * x.extent(3);
  Tensor<T> out({batch, ch, 1, 1});
  if (argmax != nullptr) argmax->assign(static_cast<size_t>(batch * ch), -1);
  const T* px = x.data();
  for (int64_t i = 0; i < batch * ch; ++i) {
    const T* plane = px + i * hw;
    T best = plane[0];
    int64_t best_idx = 0;
    for (int64_t k = 1; k < hw; ++k) {
      if (plane[k] > best) {
        best = plane[k];
        best_idx = k;
      }
    }
    out[i] = best;
    if (argmax != nullptr) (*argmax)[static_cast<size_t>(i)] = i * hw + best_idx;
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  if (x.rank() != 2 || weight.rank() != 2) throw ShapeError("linear expects rank-2 x and weight");
  const int64_t batch = x.extent(0), in = x.extent(1), out_f = weight.extent(0);
  if (weight.extent(1) != in) throw ShapeError("linear weight/input feature mismatch");
  if (bias != nullptr && bias->numel() != out_f) throw ShapeError("linear bias size mismatch");
  Tensor<T> out({batch, out_f});
  gemm_nt_acc(x.data(), weight.data(), out.data(), batch, in, out_f);
  if (bias != nullptr) {
    T* po = out.data();
    const T* pb = bias->data();
    for (int64_t l = 0; l < batch; ++l)
      for (int64_t p = 0; p < out_f; ++p) po[l * out_f + p] += pb[p];
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                      T eps) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d input must be (N,C,H,W)");
  const int64_t ch = x.extent(1);
  if (gamma.numel() != ch || beta.numel() != ch || running_mean.numel() != ch ||
      running_var.numel() != ch) {
    throw ShapeError("batchnorm2d parameter channel mismatch");
  }
  const int64_t m_count = x.extent(0) * x.extent(2) * x.extent(3);
  if (m_count < 1) throw UsageError("batchnorm2d requires a non-empty batch");
  BnStats<T> s;
  if (training) {
    s = bn_batch_stats(x, eps);
    for (int64_t c = 0; c < ch; ++c) {
      const T var = T(1) / (s.inv_std[c] * s.inv_std[c]) - eps;
      // Running variance uses the unbiased estimate when defined.
      const T var_run = m_count > 1 ? var * static_cast<T>(m_count) / static_cast<T>(m_count - 1)
                                    : var;
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * s.mean[c];
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var_run;
    }
  } else {
    s = BnStats<T>{Tensor<T>::zeros({ch}), Tensor<T>::zeros({ch})};
    for (int64_t c = 0; c < ch; ++c) {
      s.mean[c] = running_mean[c];
      s.inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  return bn_apply(x, s, gamma, beta);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects (N,K) logits");
  const int64_t batch = logits.extent(0), k = logits.extent(1);
  Tensor<T> out(logits.shape());
  const T* px = logits.data();
  T* po = out.data();
  for (int64_t l = 0; l < batch; ++l) {
    const T* row = px + l * k;
    T* orow = po + l * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int64_t j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int64_t j = 0; j < k; ++j) orow[j] /= denom;
  }
  return out;
}

template <typename T>
T cross_entropy_value(const Tensor<T>& logits, const std::vector<int32_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross entropy expects (N,K) logits");
  const int64_t batch = logits.extent(0), k = logits.extent(1);
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw ShapeError("cross entropy labels length mismatch");
  }
  const T* px = logits.data();
  T loss = T(0);
  for (int64_t l = 0; l < batch; ++l) {
    const int32_t y = labels[static_cast<size_t>(l)];
    if (y < 0 || y >= k) throw UsageError("label " + std::to_string(y) + " out of range");
    const T* row = px + l * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    loss += (mx + std::log(denom)) - row[y];
  }
  return loss / static_cast<T>(batch);
}

// ---- autodiff wrappers ----

template <typename T>
Node<T> conv2d(Node<T> input, Node<T> weight, Node<T> bias, int64_t stride, int64_t padding,
               int64_t groups) {
  Tape<T>& tape = same_tape3(input, weight, bias);
  const Tensor<T>* bias_v = bias.defined() ? &bias.value() : nullptr;
  Tensor<T> out = conv2d(input.value(), weight.value(), bias_v, stride, padding, groups);
  const int32_t ii = input.id(), iw = weight.id(), io = static_cast<int32_t>(tape.size());
  const int32_t ib = bias.defined() ? bias.id() : -1;
  std::vector<Node<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return tape.record(std::move(out), std::span<const Node<T>>(parents), [=](Tape<T>& t) {
    const Tensor<T>& g = t.grad(io);
    const bool want_i = t.needs_grad(ii);
    const bool want_w = t.needs_grad(iw);
    const bool want_b = ib >= 0 && t.needs_grad(ib);
    Tensor<T> gi, gw, gb;
    if (want_i) gi = Tensor<T>::zeros(t.value(ii).shape());
    if (want_w) gw = Tensor<T>::zeros(t.value(iw).shape());
    if (want_b) gb = Tensor<T>::zeros(t.value(ib).shape());
    conv2d_backward(t.value(ii), t.value(iw), g, stride, padding, groups, want_i ? &gi : nullptr,
                    want_w ? &gw : nullptr, want_b ? &gb : nullptr);
    if (want_i) t.add_grad(ii, gi);
    if (want_w) t.add_grad(iw, gw);
    if (want_b) t.add_grad(ib, gb);
  });
}

template <typename T>
Node<T> conv2d(Node<T> input, Node<T> weight, int64_t stride, int64_t padding, int64_t groups) {
  return conv2d(input, weight, Node<T>(), stride, padding, groups);
}

template <typename T>
Node<T> relu(Node<T> x) {
  Tape<T>& tape = *x.tape();
  Tensor<T> out = relu(x.value());
  const int32_t ix = x.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {x}, [=](Tape<T>& t) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(io);
    const Tensor<T>& v = t.value(ix);
    Tensor<T> gx(v.shape());
    const int64_t n = v.numel();
    for (int64_t i = 0; i < n; ++i) gx[i] = v[i] > T(0) ? g[i] : T(0);
    t.add_grad(ix, gx);
  });
}

template <typename T>
Node<T> sigmoid(Node<T> x) {
  Tape<T>& tape = *x.tape();
  Tensor<T> out = sigmoid(x.value());
  const int32_t ix = x.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {x}, [=](Tape<T>& t) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(io);
    const Tensor<T>& y = t.value(io);
    Tensor<T> gx(y.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) gx[i] = g[i] * y[i] * (T(1) - y[i]);
    t.add_grad(ix, gx);
  });
}

template <typename T>
Node<T> adaptive_avgpool2d(Node<T> x, int64_t out_h, int64_t out_w) {
  Tape<T>& tape = *x.tape();
  Tensor<T> out = adaptive_avgpool2d(x.value(), out_h, out_w);
  const int32_t ix = x.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {x}, [=](Tape<T>& t) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(io);
    const Tensor<T>& v = t.value(ix);
    const int64_t batch = v.extent(0), ch = v.extent(1), h = v.extent(2), w = v.extent(3);
    Tensor<T> gx(v.shape());
    int64_t off = 0;
    for (int64_t l = 0; l < batch; ++l) {
      for (int64_t c = 0; c < ch; ++c) {
        T* plane = gx.data() + (l * ch + c) * h * w;
        for (int64_t i = 0; i < out_h; ++i) {
          const int64_t r0 = bin_lo(i, h, out_h), r1 = bin_hi(i, h, out_h);
          for (int64_t j = 0; j < out_w; ++j, ++off) {
            const int64_t c0 = bin_lo(j, w, out_w), c1 = bin_hi(j, w, out_w);
            const T share = g[off] / static_cast<T>((r1 - r0) * (c1 - c0));
            for (int64_t r = r0; r < r1; ++r)
              for (int64_t cc = c0; cc < c1; ++cc) plane[r * w + cc] += share;
          }
        }
      }
    }
    t.add_grad(ix, gx);
  });
}

template <typename T>
Node<T> global_avgpool(Node<T> x) {
  return adaptive_avgpool2d(x, 1, 1);
}

template <typename T>
Node<T> maxpool2d(Node<T> x, int64_t kernel, int64_t stride, int64_t padding) {
  Tape<T>& tape = *x.tape();
  auto argmax = std::make_shared<std::vector<int64_t>>();
  Tensor<T> out = maxpool2d(x.value(), kernel, stride, padding, argmax.get());
  const int32_t ix = x.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {x}, [=](Tape<T>& t) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(io);
    Tensor<T> gx(t.value(ix).shape());
    for (int64_t i = 0; i < g.numel(); ++i) gx[(*argmax)[static_cast<size_t>(i)]] += g[i];
    t.add_grad(ix, gx);
  });
}

template <typename T>
Node<T> global_maxpool(Node<T> x) {
  Tape<T>& tape = *x.tape();
  auto argmax = std::make_shared<std::vector<int64_t>>();
  Tensor<T> out = global_maxpool(x.value(), argmax.get());
  const int32_t ix = x.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {x}, [=](Tape<T>& t) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(io);
    Tensor<T> gx(t.value(ix).shape());
    for (int64_t i = 0; i < g.numel(); ++i) gx[(*argmax)[static_cast<size_t>(i)]] += g[i];
    t.add_grad(ix, gx);
  });
}

template <typename T>
Node<T> linear(Node<T> x, Node<T> weight, Node<T> bias) {
  Tape<T>& tape = same_tape3(x, weight, bias);
  const Tensor<T>* bias_v = bias.defined() ? &bias.value() : nullptr;
  Tensor<T> out = linear(x.value(), weight.value(), bias_v);
  const int32_t ix = x.id(), iw = weight.id(), io = static_cast<int32_t>(tape.size());
  const int32_t ib = bias.defined() ? bias.id() : -1;
  std::vector<Node<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return tape.record(std::move(out), std::span<const Node<T>>(parents), [=](Tape<T>& t) {
    const Tensor<T>& g = t.grad(io);
    const Tensor<T>& xv = t.value(ix);
    const Tensor<T>& wv = t.value(iw);
    const int64_t batch = xv.extent(0), in = xv.extent(1), out_f = wv.extent(0);
    if (t.needs_grad(ix)) {
      Tensor<T> gx(xv.shape());
      gemm_acc(g.data(), wv.data(), gx.data(), batch, out_f, in);
      t.add_grad(ix, gx);
    }
    if (t.needs_grad(iw)) {
      // dW[o,i] = sum_l g[l,o] * x[l,i], accumulated in ascending l.
      Tensor<T> gw(wv.shape());
      for (int64_t l = 0; l < batch; ++l) {
        const T* grow = g.data() + l * out_f;
        const T* xrow = xv.data() + l * in;
        for (int64_t o = 0; o < out_f; ++o) {
          const T gv = grow[o];
          T* wrow = gw.data() + o * in;
          for (int64_t i = 0; i < in; ++i) wrow[i] += gv * xrow[i];
        }
      }
      t.add_grad(iw, gw);
    }
    if (ib >= 0 && t.needs_grad(ib)) {
      Tensor<T> gb(t.value(ib).shape());
      for (int64_t l = 0; l < batch; ++l)
        for (int64_t o = 0; o < out_f; ++o) gb[o] += g[l * out_f + o];
      t.add_grad(ib, gb);
    }
  });
}

template <typename T>
Node<T> batchnorm2d(Node<T> x, Node<T> gamma, Node<T> beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, bool training, T momentum, T eps) {
  Tape<T>& tape = same_tape3(x, gamma, beta);
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("batchnorm2d input must be (N,C,H,W)");
  const int64_t ch = xv.extent(1);
  auto stats = std::make_shared<BnStats<T>>();
  Tensor<T> y;
  if (training) {
    y = batchnorm2d(xv, gamma.value(), beta.value(), running_mean, running_var, true, momentum,
                    eps);
    *stats = bn_batch_stats(xv, eps);
  } else {
    *stats = BnStats<T>{Tensor<T>::zeros({ch}), Tensor<T>::zeros({ch})};
    for (int64_t c = 0; c < ch; ++c) {
      stats->mean[c] = running_mean[c];
      stats->inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
    y = bn_apply(xv, *stats, gamma.value(), beta.value());
  }
  const int32_t ix = x.id(), ig = gamma.id(), ib = beta.id(),
                io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(y), {x, gamma, beta}, [=](Tape<T>& t) {
    bn_backward(t, ix, ig, ib, io, *stats, training);
  });
}

template <typename T>
Node<T> batchnorm2d(Node<T> x, Node<T> gamma, Node<T> beta, BatchNormState<T>& state,
                    bool training) {
  return batchnorm2d(x, gamma, beta, state.running_mean, state.running_var, training,
                     state.momentum, state.eps);
}

template <typename T>
Node<T> concat_channels(Node<T> a, Node<T> b) {
  Tape<T>& tape = ad::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 4 || bv.rank() != 4 || av.extent(0) != bv.extent(0) ||
      av.extent(2) != bv.extent(2) || av.extent(3) != bv.extent(3)) {
    throw ShapeError("concat_channels expects (N,*,H,W) operands with matching N,H,W");
  }
  const int64_t batch = av.extent(0), ca = av.extent(1), cb = bv.extent(1),
                hw = av.extent(2) * av.extent(3);
  Tensor<T> out({batch, ca + cb, av.extent(2), av.extent(3)});
  for (int64_t l = 0; l < batch; ++l) {
    std::copy(av.data() + l * ca * hw, av.data() + (l + 1) * ca * hw,
              out.data() + l * (ca + cb) * hw);
    std::copy(bv.data() + l * cb * hw, bv.data() + (l + 1) * cb * hw,
              out.data() + (l * (ca + cb) + ca) * hw);
  }
  const int32_t ia = a.id(), ibn = b.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t) {
    const Tensor<T>& g = t.grad(io);
    if (t.needs_grad(ia)) {
      Tensor<T> ga(t.value(ia).shape());
      for (int64_t l = 0; l < batch; ++l)
        std::copy(g.data() + l * (ca + cb) * hw, g.data() + (l * (ca + cb) + ca) * hw,
                  ga.data() + l * ca * hw);
      t.add_grad(ia, ga);
    }
    if (t.needs_grad(ibn)) {
      Tensor<T> gb(t.value(ibn).shape());
      for (int64_t l = 0; l < batch; ++l)
        std::copy(g.data() + (l * (ca + cb) + ca) * hw, g.data() + (l + 1) * (ca + cb) * hw,
                  gb.data() + l * cb * hw);
      t.add_grad(ibn, gb);
    }
  });
}

template <typename T>
Node<T> channel_mean(Node<T> x) {
  Tape<T>& tape = *x.tape();
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("channel_mean input must be (N,C,H,W)");
  const int64_t batch = xv.extent(0), ch = xv.extent(1), hw = xv.extent(2) * xv.extent(3);
  Tensor<T> out({batch, 1, xv.extent(2), xv.extent(3)});
  for (int64_t l = 0; l < batch; ++l) {
    for (int64_t i = 0; i < hw; ++i) {
      T acc = T(0);
      for (int64_t c = 0; c < ch; ++c) acc += xv[(l * ch + c) * hw + i];
      out[l * hw + i] = acc / static_cast<T>(ch);
    }
  }
  const int32_t ix = x.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {x}, [=](Tape<T>& t) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(io);
    Tensor<T> gx(t.value(ix).shape());
    const T inv = T(1) / static_cast<T>(ch);
    for (int64_t l = 0; l < batch; ++l)
      for (int64_t i = 0; i < hw; ++i) {
        const T share = g[l * hw + i] * inv;
        for (int64_t c = 0; c < ch; ++c) gx[(l * ch + c) * hw + i] = share;
      }
    t.add_grad(ix, gx);
  });
}

template <typename T>
Node<T> channel_max(Node<T> x) {
  Tape<T>& tape = *x.tape();
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("channel_max input must be (N,C,H,W)");
  const int64_t batch = xv.extent(0), ch = xv.extent(1), hw = xv.extent(2) * xv.extent(3);
  Tensor<T> out({batch, 1, xv.extent(2), xv.extent(3)});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(batch * hw));
  for (int64_t l = 0; l < batch; ++l) {
    for (int64_t i = 0; i < hw; ++i) {
      T best = xv[l * ch * hw + i];
      int64_t best_c = 0;
      for (int64_t c = 1; c < ch; ++c) {
        const T v = xv[(l * ch + c) * hw + i];
        if (v > best) {
          best = v;
          best_c = c;
        }
      }
      out[l * hw + i] = best;
      (*argmax)[static_cast<size_t>(l * hw + i)] = (l * ch + best_c) * hw + i;
    }
  }
  const int32_t ix = x.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {x}, [=](Tape<T>& t) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(io);
    Tensor<T> gx(t.value(ix).shape());
    for (int64_t i = 0; i < g.numel(); ++i) gx[(*argmax)[static_cast<size_t>(i)]] += g[i];
    t.add_grad(ix, gx);
  });
}

template <typename T>
Node<T> softmax_cross_entropy(Node<T> logits, const std::vector<int32_t>& labels) {
  Tape<T>& tape = *logits.tape();
  const Tensor<T>& lv = logits.value();
  const T loss = cross_entropy_value(lv, labels);
  auto probs = std::make_shared<Tensor<T>>(softmax(lv));
  auto labels_copy = std::make_shared<std::vector<int32_t>>(labels);
  const int32_t il = logits.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(Tensor<T>::scalar(loss), {logits}, [=](Tape<T>& t) {
    if (!t.needs_grad(il)) return;
    const T gscale = t.grad(io)[0];
    const int64_t batch = probs->extent(0), k = probs->extent(1);
    Tensor<T> gl(probs->shape());
    const T inv_batch = T(1) / static_cast<T>(batch);
    for (int64_t l = 0; l < batch; ++l) {
      const int32_t y = (*labels_copy)[static_cast<size_t>(l)];
      for (int64_t j = 0; j < k; ++j) {
        T v = (*probs)[l * k + j];
        if (j == y) v -= T(1);
        gl[l * k + j] = v * inv_batch * gscale;
      }
    }
    t.add_grad(il, gl);
  });
}

// ---- explicit instantiations ----

#define AWCONV_INSTANTIATE_NN_OPS(T)                                                           \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int64_t, \
                               int64_t, int64_t);                                              \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                   int64_t, int64_t, int64_t, Tensor<T>*, Tensor<T>*,         \
                                   Tensor<T>*);                                               \
  template Tensor<T> relu<T>(const Tensor<T>&);                                               \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                            \
  template Tensor<T> adaptive_avgpool2d<T>(const Tensor<T>&, int64_t, int64_t);               \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, int64_t, int64_t, int64_t,                \
                                  std::vector<int64_t>*);                                     \
  template Tensor<T> global_maxpool<T>(const Tensor<T>&, std::vector<int64_t>*);              \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);         \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                    Tensor<T>&, Tensor<T>&, bool, T, T);                      \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                            \
  template T cross_entropy_value<T>(const Tensor<T>&, const std::vector<int32_t>&);           \
  template void gemm_acc<T>(const T*, const T*, T*, int64_t, int64_t, int64_t);               \
  template void gemm_nt_acc<T>(const T*, const T*, T*, int64_t, int64_t, int64_t);            \
  template Node<T> conv2d<T>(Node<T>, Node<T>, Node<T>, int64_t, int64_t, int64_t);           \
  template Node<T> conv2d<T>(Node<T>, Node<T>, int64_t, int64_t, int64_t);                    \
  template Node<T> relu<T>(Node<T>);                                                          \
  template Node<T> sigmoid<T>(Node<T>);                                                       \
  template Node<T> adaptive_avgpool2d<T>(Node<T>, int64_t, int64_t);                          \
  template Node<T> maxpool2d<T>(Node<T>, int64_t, int64_t, int64_t);                          \
  template Node<T> global_avgpool<T>(Node<T>);                                                \
  template Node<T> global_maxpool<T>(Node<T>);                                                \
  template Node<T> linear<T>(Node<T>, Node<T>, Node<T>);                                      \
  template Node<T> batchnorm2d<T>(Node<T>, Node<T>, Node<T>, Tensor<T>&, Tensor<T>&, bool, T, \
                                  T);                                                         \
  template Node<T> batchnorm2d<T>(Node<T>, Node<T>, Node<T>, BatchNormState<T>&, bool);       \
  template Node<T> concat_channels<T>(Node<T>, Node<T>);                                      \
  template Node<T> channel_mean<T>(Node<T>);                                                  \
  template Node<T> channel_max<T>(Node<T>);                                                   \
  template Node<T> softmax_cross_entropy<T>(Node<T>, const std::vector<int32_t>&);

AWCONV_INSTANTIATE_NN_OPS(float)
AWCONV_INSTANTIATE_NN_OPS(double)

}  // namespace awconv::nn
