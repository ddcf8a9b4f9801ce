#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "awconv/errors.hpp"
#include "awconv/rng.hpp"
#include "awconv/tensor.hpp"

namespace awconv {

template <typename T>
class Tape;

// Handle to one tape entry. Cheap to copy; the tape owns all storage.
template <typename T>
class Node {
 public:
  Node() = default;
  Node(Tape<T>* tape, int32_t id) : tape_(tape), id_(id) {}

  bool defined() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  int32_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  bool needs_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  int32_t id_ = -1;
};

// Reverse-mode tape. Ops record themselves during the forward pass; backward
// replays the registered rules in reverse recording order, accumulating (+=)
// into parent gradients so shared subexpressions pick up every contribution.
// A tape is single-threaded; distinct tapes may run concurrently.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape<T>&)>;

  Node<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Entry e;
    e.value = std::move(value);
    e.grad = Tensor<T>::zeros(e.value.shape());
    e.needs_grad = requires_grad;
    e.is_leaf = true;
    entries_.push_back(std::move(e));
    const int32_t id = static_cast<int32_t>(entries_.size() - 1);
    if (requires_grad) params_.push_back(id);
    return Node<T>(this, id);
  }

  // Registers an op result. `backward` adds this entry's grad into its
  // parents' grads; it is dropped when no parent (transitively) needs one.
  Node<T> record(Tensor<T> value, std::span<const Node<T>> parents, BackwardFn backward) {
    bool needs = false;
    for (const Node<T>& p : parents) {
      if (p.tape() != this) throw UsageError("record: inputs live on different tapes");
      needs = needs || entries_[static_cast<size_t>(p.id())].needs_grad;
    }
    Entry e;
    e.value = std::move(value);
    e.grad = Tensor<T>::zeros(e.value.shape());
    e.needs_grad = needs;
    if (needs) e.backward = std::move(backward);
    entries_.push_back(std::move(e));
    return Node<T>(this, static_cast<int32_t>(entries_.size() - 1));
  }

  Node<T> record(Tensor<T> value, std::initializer_list<Node<T>> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Node<T>>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  // Seeds d(loss)/d(loss) = 1 and propagates. Leaf gradients accumulate
  // across calls (the caller zeroes between steps); interior gradients are
  // scratch, reset at the start of every pass.
  void backward(Node<T> loss) {
    if (loss.tape() != this) throw UsageError("backward: loss lives on a different tape");
    Entry& top = entries_[static_cast<size_t>(loss.id())];
    if (top.value.numel() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " +
                       shape_str(top.value.shape()));
    }
    for (int32_t i = 0; i <= loss.id(); ++i) {
      Entry& e = entries_[static_cast<size_t>(i)];
      if (!e.is_leaf && e.needs_grad) fill(e.grad, T(0));
    }
    top.grad[0] += T(1);
    for (int32_t i = loss.id(); i >= 0; --i) {
      Entry& e = entries_[static_cast<size_t>(i)];
      if (e.needs_grad && e.backward) e.backward(*this);
    }
  }

  void zero_grads() {
    for (Entry& e : entries_) fill(e.grad, T(0));
  }

  const Tensor<T>& value(int32_t id) const { return entries_[static_cast<size_t>(id)].value; }
  const Tensor<T>& grad(int32_t id) const { return entries_[static_cast<size_t>(id)].grad; }
  bool needs_grad(int32_t id) const { return entries_[static_cast<size_t>(id)].needs_grad; }

  // Accumulates `g` into an entry's gradient; shapes must match exactly.
  void add_grad(int32_t id, const Tensor<T>& g) {
    Entry& e = entries_[static_cast<size_t>(id)];
    if (g.shape() != e.grad.shape()) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                       shape_str(e.grad.shape()));
    }
    T* pg = e.grad.data();
    const T* ps = g.data();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) pg[i] += ps[i];
  }

  size_t size() const { return entries_.size(); }
  const std::vector<int32_t>& parameter_ids() const { return params_; }

 private:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  std::vector<int32_t> params_;
};

template <typename T>
const Tensor<T>& Node<T>::value() const {
  return tape_->value(id_);
}
template <typename T>
const Tensor<T>& Node<T>::grad() const {
  return tape_->grad(id_);
}
template <typename T>
bool Node<T>::needs_grad() const {
  return tape_->needs_grad(id_);
}

namespace ad {

template <typename T>
Tape<T>& same_tape(Node<T> a, Node<T> b) {
  if (a.tape() != b.tape()) throw UsageError("operands live on different tapes");
  return *a.tape();
}

template <typename T>
Node<T> constant(Tape<T>& tape, Tensor<T> v) {
  return tape.leaf(std::move(v), false);
}

template <typename T>
Node<T> add(Node<T> a, Node<T> b) {
  Tape<T>& tape = same_tape(a, b);
  Tensor<T> out = awconv::add(a.value(), b.value());
  const Shape sa = a.value().shape(), sb = b.value().shape();
  const int32_t ia = a.id(), ib = b.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t) {
    const Tensor<T>& g = t.grad(io);
    if (t.needs_grad(ia)) t.add_grad(ia, reduce_to_shape(g, sa));
    if (t.needs_grad(ib)) t.add_grad(ib, reduce_to_shape(g, sb));
  });
}

template <typename T>
Node<T> sub(Node<T> a, Node<T> b) {
  Tape<T>& tape = same_tape(a, b);
  Tensor<T> out = awconv::sub(a.value(), b.value());
  const Shape sa = a.value().shape(), sb = b.value().shape();
  const int32_t ia = a.id(), ib = b.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t) {
    const Tensor<T>& g = t.grad(io);
    if (t.needs_grad(ia)) t.add_grad(ia, reduce_to_shape(g, sa));
    if (t.needs_grad(ib)) t.add_grad(ib, reduce_to_shape(scale(g, T(-1)), sb));
  });
}

template <typename T>
Node<T> hadamard(Node<T> a, Node<T> b) {
  Tape<T>& tape = same_tape(a, b);
  Tensor<T> out = awconv::hadamard(a.value(), b.value());
  const Shape sa = a.value().shape(), sb = b.value().shape();
  const int32_t ia = a.id(), ib = b.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& t) {
    const Tensor<T>& g = t.grad(io);
    if (t.needs_grad(ia)) t.add_grad(ia, reduce_to_shape(awconv::hadamard(g, t.value(ib)), sa));
    if (t.needs_grad(ib)) t.add_grad(ib, reduce_to_shape(awconv::hadamard(g, t.value(ia)), sb));
  });
}

template <typename T>
Node<T> scale(Node<T> a, T c) {
  Tape<T>& tape = *a.tape();
  Tensor<T> out = awconv::scale(a.value(), c);
  const int32_t ia = a.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a}, [=](Tape<T>& t) {
    if (t.needs_grad(ia)) t.add_grad(ia, awconv::scale(t.grad(io), c));
  });
}

template <typename T>
Node<T> reshape(Node<T> a, Shape ns) {
  Tape<T>& tape = *a.tape();
  const Shape sa = a.value().shape();
  Tensor<T> out = a.value().reshape(std::move(ns));
  const int32_t ia = a.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a}, [=](Tape<T>& t) {
    if (t.needs_grad(ia)) t.add_grad(ia, t.grad(io).reshape(sa));
  });
}

template <typename T>
Node<T> unsqueeze(Node<T> a, int64_t dim) {
  Shape ns = a.value().shape();
  if (dim < 0 || dim > static_cast<int64_t>(ns.size())) {
    throw ShapeError("unsqueeze dim out of range");
  }
  ns.insert(ns.begin() + static_cast<size_t>(dim), 1);
  return reshape(a, std::move(ns));
}

template <typename T>
Node<T> expand(Node<T> a, const Shape& target) {
  Tape<T>& tape = *a.tape();
  const Shape sa = a.value().shape();
  Tensor<T> out = a.value().expand(target);
  const int32_t ia = a.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a}, [=](Tape<T>& t) {
    if (t.needs_grad(ia)) t.add_grad(ia, reduce_to_shape(t.grad(io), sa));
  });
}

template <typename T>
Node<T> reduce_sum(Node<T> a, const std::vector<int64_t>& dims) {
  Tape<T>& tape = *a.tape();
  const Shape sa = a.value().shape();
  Tensor<T> out = awconv::reduce_sum(a.value(), dims);
  const int32_t ia = a.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a}, [=](Tape<T>& t) {
    if (t.needs_grad(ia)) t.add_grad(ia, t.grad(io).expand(sa));
  });
}

template <typename T>
Node<T> reduce_mean(Node<T> a, const std::vector<int64_t>& dims) {
  Tape<T>& tape = *a.tape();
  const Shape sa = a.value().shape();
  Tensor<T> out = awconv::reduce_mean(a.value(), dims);
  const T inv_count = static_cast<T>(out.numel()) / static_cast<T>(a.value().numel());
  const int32_t ia = a.id(), io = static_cast<int32_t>(tape.size());
  return tape.record(std::move(out), {a}, [=](Tape<T>& t) {
    if (t.needs_grad(ia)) t.add_grad(ia, awconv::scale(t.grad(io).expand(sa), inv_count));
  });
}

// Sum of every element, as a scalar of shape (1).
template <typename T>
Node<T> sum_all(Node<T> a) {
  std::vector<int64_t> dims(static_cast<size_t>(a.value().rank()));
  for (size_t i = 0; i < dims.size(); ++i) dims[i] = static_cast<int64_t>(i);
  return reshape(reduce_sum(a, dims), Shape{1});
}

}  // namespace ad

// Finite-difference gradient verification in f64: for each checked parameter
// element, compares the analytic gradient against the central difference
// (f(p+eps) - f(p-eps)) / (2 eps), reporting the worst relative error
// |a - n| / max(|a|, |n|, 1e-8). NaN or Inf anywhere is reported as a
// numerical failure instead of crashing.
struct GradCheckReport {
  double max_rel_err = 0;
  double max_abs_err = 0;
  int64_t elements_checked = 0;
  bool numerical_failure = false;
  double tol = 0;
  std::string worst_location;

  bool passed() const { return !numerical_failure && max_rel_err < tol; }
};

using GradCheckFn = std::function<Node<double>(Tape<double>&, std::vector<Node<double>>&)>;

inline GradCheckReport grad_check(const GradCheckFn& f, const std::vector<Tensor<double>>& params,
                                  double eps = 1e-5, double tol = 1e-4,
                                  int64_t max_elements_per_param = -1,
                                  uint64_t sample_seed = 0) {
  GradCheckReport report;
  report.tol = tol;

  auto eval_value = [&](const std::vector<Tensor<double>>& p) -> double {
    Tape<double> tape;
    std::vector<Node<double>> leaves;
    leaves.reserve(p.size());
    for (const auto& t : p) leaves.push_back(tape.leaf(t, false));
    Node<double> out = f(tape, leaves);
    if (out.value().numel() != 1) throw UsageError("grad_check requires a scalar-valued function");
    return out.value()[0];
  };

  // Analytic pass.
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Node<double>> leaves;
    leaves.reserve(params.size());
    for (const auto& t : params) leaves.push_back(tape.leaf(t, true));
    Node<double> out = f(tape, leaves);
    if (out.value().numel() != 1) throw UsageError("grad_check requires a scalar-valued function");
    if (!std::isfinite(out.value()[0])) {
      report.numerical_failure = true;
      report.worst_location = "loss value not finite";
      return report;
    }
    tape.backward(out);
    for (const auto& leaf : leaves) {
      if (!all_finite(leaf.grad())) {
        report.numerical_failure = true;
        report.worst_location = "analytic gradient not finite";
        return report;
      }
      analytic.push_back(leaf.grad());
    }
  }

  std::vector<Tensor<double>> work = params;
  Rng rng(sample_seed ^ 0x5bd1e995u);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const int64_t n = params[pi].numel();
    std::vector<int64_t> indices;
    if (max_elements_per_param < 0 || n <= max_elements_per_param) {
      indices.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
    } else {
      // Sampled spot-check for large parameters; distinct draws.
      std::vector<bool> taken(static_cast<size_t>(n), false);
      while (static_cast<int64_t>(indices.size()) < max_elements_per_param) {
        const int64_t i = rng.uniform_int(0, n - 1);
        if (!taken[static_cast<size_t>(i)]) {
          taken[static_cast<size_t>(i)] = true;
          indices.push_back(i);
        }
      }
    }
    for (int64_t i : indices) {
      const double saved = work[pi][i];
      work[pi][i] = saved + eps;
      const double fp = eval_value(work);
      work[pi][i] = saved - eps;
      const double fm = eval_value(work);
      work[pi][i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.numerical_failure = true;
        report.worst_location = "perturbed loss not finite at param " + std::to_string(pi);
        return report;
      }
      const double numeric = (fp - fm) / (2 * eps);
      const double analytic_v = analytic[pi][i];
      const double abs_err = std::abs(analytic_v - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic_v), std::abs(numeric), 1e-8});
      ++report.elements_checked;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        report.worst_location = "param " + std::to_string(pi) + "[" + std::to_string(i) +
                                "] analytic=" + std::to_string(analytic_v) +
                                " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace awconv
