#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "awconv/errors.hpp"

namespace awconv {

enum class DType : uint8_t { f32 = 0, f64 = 1 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::f32;
};
template <>
struct dtype_of<double> {
  static constexpr DType value = DType::f64;
};

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline void check_shape_valid(const Shape& s) {
  if (s.empty()) throw ShapeError("tensor rank must be >= 1");
  for (int64_t e : s) {
    if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + shape_str(s));
  }
}

inline Shape row_major_strides(const Shape& s) {
  Shape st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Trailing-aligned broadcast shape of two shapes; size-1 extents stretch.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Dense row-major n-d array over f32 or f64 elements. Values are treated as
// immutable once constructed; in-place writes are confined to construction
// and to the optimizer's parameter updates.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape_valid(shape_);
    data_.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape_valid(shape_);
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  bool defined() const { return !shape_.empty(); }
  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t extent(int64_t d) const { return shape_[static_cast<size_t>(d)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  DType dtype() const { return dtype_of<T>::value; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Bounds-checked multi-index access; handy in tests, not for hot loops.
  T& at(std::initializer_list<int64_t> idx) { return data_[checked_offset(idx)]; }
  const T& at(std::initializer_list<int64_t> idx) const { return data_[checked_offset(idx)]; }

  Tensor reshape(Shape ns) const {
    check_shape_valid(ns);
    if (shape_numel(ns) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(ns));
    }
    return Tensor(std::move(ns), data_);
  }

  Tensor unsqueeze(int64_t dim) const {
    if (dim < 0 || dim > rank()) {
      throw ShapeError("unsqueeze dim " + std::to_string(dim) + " out of range for " +
                       shape_str(shape_));
    }
    Shape ns = shape_;
    ns.insert(ns.begin() + static_cast<size_t>(dim), 1);
    return Tensor(std::move(ns), data_);
  }

  // Materialized expand: size-1 extents replicate to the target extent.
  Tensor expand(const Shape& target) const {
    if (target.size() != shape_.size()) {
      throw ShapeError("expand requires equal rank, got " + shape_str(shape_) + " -> " +
                       shape_str(target));
    }
    for (size_t i = 0; i < target.size(); ++i) {
      if (shape_[i] != target[i] && shape_[i] != 1) {
        throw ShapeError("cannot expand " + shape_str(shape_) + " to " + shape_str(target));
      }
    }
    Tensor out(target);
    const size_t rank = target.size();
    Shape src_stride = row_major_strides(shape_);
    std::vector<int64_t> step(rank);
    for (size_t i = 0; i < rank; ++i) step[i] = shape_[i] == 1 ? 0 : src_stride[i];
    std::vector<int64_t> idx(rank, 0);
    int64_t off = 0;
    T* po = out.data();
    const T* ps = data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
      po[i] = ps[off];
      for (size_t d = rank; d-- > 0;) {
        ++idx[d];
        off += step[d];
        if (idx[d] < target[d]) break;
        idx[d] = 0;
        off -= step[d] * target[d];
      }
    }
    return out;
  }

  Tensor transpose2d() const {
    if (rank() != 2) throw ShapeError("transpose2d requires rank 2, got " + shape_str(shape_));
    const int64_t r = shape_[0], c = shape_[1];
    Tensor out({c, r});
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) out.data_[static_cast<size_t>(j * r + i)] = data_[static_cast<size_t>(i * c + j)];
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(d));
  }

 private:
  size_t checked_offset(std::initializer_list<int64_t> idx) const {
    if (static_cast<int64_t>(idx.size()) != rank()) {
      throw ShapeError("index rank mismatch for " + shape_str(shape_));
    }
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) {
      if (i < 0 || i >= shape_[d]) throw ShapeError("index out of bounds for " + shape_str(shape_));
      off = off * shape_[d] + i;
      ++d;
    }
    return static_cast<size_t>(off);
  }

  Shape shape_;
  std::vector<T> data_;
};

// Element-wise combine with trailing-aligned broadcasting.
template <typename T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(os);
  const size_t rank = os.size();
  std::vector<int64_t> sa(rank, 0), sb(rank, 0);
  {
    const Shape astr = row_major_strides(a.shape());
    const Shape bstr = row_major_strides(b.shape());
    const size_t da = rank - a.shape().size();
    const size_t db = rank - b.shape().size();
    for (size_t i = 0; i < a.shape().size(); ++i) sa[da + i] = a.shape()[i] == 1 ? 0 : astr[i];
    for (size_t i = 0; i < b.shape().size(); ++i) sb[db + i] = b.shape()[i] == 1 ? 0 : bstr[i];
  }
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = f(pa[oa], pb[ob]);
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      oa -= sa[d] * os[d];
      ob -= sb[d] * os[d];
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x - y; });
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  return out;
}

template <typename T>
void fill(Tensor<T>& t, T v) {
  T* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = v;
}

// Sum over `dims`, keeping reduced extents as 1. Accumulation follows the
// row-major input order, so results are deterministic.
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, const std::vector<int64_t>& dims) {
  const size_t rank = a.shape().size();
  std::vector<bool> reduced(rank, false);
  for (int64_t d : dims) {
    if (d < 0 || d >= static_cast<int64_t>(rank)) {
      throw ShapeError("reduce dim " + std::to_string(d) + " out of range for " +
                       shape_str(a.shape()));
    }
    reduced[static_cast<size_t>(d)] = true;
  }
  Shape os = a.shape();
  for (size_t i = 0; i < rank; ++i) {
    if (reduced[i]) os[i] = 1;
  }
  Tensor<T> out(os);
  const Shape ostr = row_major_strides(os);
  std::vector<int64_t> step(rank);
  for (size_t i = 0; i < rank; ++i) step[i] = reduced[i] ? 0 : ostr[i];
  std::vector<int64_t> idx(rank, 0);
  int64_t oo = 0;
  const T* pa = a.data();
  T* po = out.data();
  const int64_t n = a.numel();
  const Shape& as = a.shape();
  for (int64_t i = 0; i < n; ++i) {
    po[oo] += pa[i];
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      oo += step[d];
      if (idx[d] < as[d]) break;
      idx[d] = 0;
      oo -= step[d] * as[d];
    }
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<int64_t>& dims) {
  Tensor<T> s = reduce_sum(a, dims);
  const int64_t count = a.numel() / s.numel();
  return scale(s, T(1) / static_cast<T>(count));
}

// Sum-reduce `g` down to `target`, the adjoint of broadcasting a tensor of
// shape `target` up to g's shape.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  const size_t rank = g.shape().size();
  if (target.size() > rank) {
    throw ShapeError("reduce_to_shape target rank exceeds source rank");
  }
  Shape padded(rank, 1);
  std::copy(target.begin(), target.end(), padded.begin() + (rank - target.size()));
  std::vector<int64_t> dims;
  for (size_t i = 0; i < rank; ++i) {
    if (padded[i] == 1 && g.shape()[i] != 1) dims.push_back(static_cast<int64_t>(i));
    else if (padded[i] != g.shape()[i]) {
      throw ShapeError("shape " + shape_str(target) + " does not broadcast to " +
                       shape_str(g.shape()));
    }
  }
  Tensor<T> r = dims.empty() ? g : reduce_sum(g, dims);
  return r.reshape(target);
}

// Materializes `t` broadcast up to `target` (trailing-aligned).
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& t, const Shape& target) {
  if (t.shape() == target) return t;
  if (t.rank() > static_cast<int64_t>(target.size())) {
    throw ShapeError("cannot broadcast " + shape_str(t.shape()) + " to " + shape_str(target));
  }
  Shape padded(target.size(), 1);
  std::copy(t.shape().begin(), t.shape().end(),
            padded.begin() + (target.size() - t.shape().size()));
  return t.reshape(padded).expand(target);
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff requires equal shapes");
  double m = 0;
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(t[i])) return false;
  }
  return true;
}

}  // namespace awconv
