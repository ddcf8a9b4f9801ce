#include <cmath>

#include "awconv/autodiff.hpp"
#include "awconv/nn_ops.hpp"
#include "doctest.h"

using namespace awconv;

TEST_CASE("recorded values match eager arithmetic") {
  Tape<double> tape;
  Node<double> x = tape.leaf(Tensor<double>({2}, {1, 2}), true);
  Node<double> y = tape.leaf(Tensor<double>({2}, {10, 20}), false);
  Node<double> s = ad::add(x, y);
  CHECK(s.value()[0] == 11);
  CHECK(s.value()[1] == 22);
}

TEST_CASE("nodes without grad-requiring inputs are excluded from backward") {
  Tape<double> tape;
  Node<double> x = tape.leaf(Tensor<double>({2}, {1, 2}), false);
  Node<double> y = ad::hadamard(x, x);
  CHECK_FALSE(y.needs_grad());
  Node<double> loss = ad::sum_all(y);
  tape.backward(loss);
  CHECK(x.grad()[0] == 0);
}

TEST_CASE("diamond graph accumulates both contributions") {
  Tape<double> tape;
  Node<double> x = tape.leaf(Tensor<double>({3}, {1, 2, 3}), true);
  Node<double> loss = ad::sum_all(ad::add(x, x));
  tape.backward(loss);
  for (int64_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2);
}

TEST_CASE("backward requires a scalar loss") {
  Tape<double> tape;
  Node<double> x = tape.leaf(Tensor<double>({2}, {1, 2}), true);
  CHECK_THROWS_AS(tape.backward(x), UsageError);
}

TEST_CASE("linear form gradient is the fixed factor") {
  Tape<double> tape;
  Node<double> w = tape.leaf(Tensor<double>({3}, {0.5, -1, 2}), true);
  Node<double> x = tape.leaf(Tensor<double>({3}, {3, 4, 5}), false);
  Node<double> loss = ad::sum_all(ad::hadamard(w, x));
  tape.backward(loss);
  for (int64_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == x.value()[i]);
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
  Tape<double> tape;
  Node<double> x = tape.leaf(Tensor<double>::zeros({1}), true);
  Node<double> loss = nn::sigmoid(x);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gradients accumulate until zeroed") {
  Tape<double> tape;
  Node<double> x = tape.leaf(Tensor<double>({2}, {1, 2}), true);
  Node<double> loss = ad::sum_all(ad::hadamard(x, x));
  tape.backward(loss);
  Tensor<double> once = x.grad();
  tape.backward(loss);
  for (int64_t i = 0; i < 2; ++i) CHECK(x.grad()[i] == 2 * once[i]);

  tape.zero_grads();
  for (int64_t i = 0; i < 2; ++i) CHECK(x.grad()[i] == 0);
  tape.zero_grads();  // idempotent
  for (int64_t i = 0; i < 2; ++i) CHECK(x.grad()[i] == 0);
  tape.backward(loss);
  CHECK(bitwise_equal(x.grad(), once));
}

TEST_CASE("mixing tapes is a usage error") {
  Tape<double> t1, t2;
  Node<double> a = t1.leaf(Tensor<double>({1}, {1}), true);
  Node<double> b = t2.leaf(Tensor<double>({1}, {2}), true);
  CHECK_THROWS_AS(ad::add(a, b), UsageError);
}

TEST_CASE("gradient of a sum of losses equals the sum of gradients") {
  const Tensor<double> w0({3}, {0.3, -0.7, 1.1});
  auto grad_of = [&](bool first, bool second) {
    Tape<double> tape;
    Node<double> w = tape.leaf(w0, true);
    Node<double> l1 = ad::sum_all(ad::hadamard(w, w));
    Node<double> l2 = ad::sum_all(ad::scale(w, 3.0));
    Node<double> loss = first && second ? ad::add(l1, l2) : (first ? l1 : l2);
    tape.backward(loss);
    return Tensor<double>(w.grad());
  };
  Tensor<double> combined = grad_of(true, true);
  Tensor<double> summed = add(grad_of(true, false), grad_of(false, true));
  // The combined pass accumulates contributions in a different order, so
  // allow rounding at the last digit.
  CHECK(max_abs_diff(combined, summed) < 1e-12);
}

TEST_CASE("grad_check validates a quadratic and a constant") {
  {
    GradCheckReport r = grad_check(
        [](Tape<double>&, std::vector<Node<double>>& p) {
          return ad::sum_all(ad::hadamard(p[0], p[0]));
        },
        {Tensor<double>({1}, {3.0})}, 1e-5, 1e-7);
    CHECK(r.passed());
    CHECK(r.max_abs_err < 1e-6);  // analytic 6 vs central difference
  }
  {
    GradCheckReport r = grad_check(
        [](Tape<double>& tape, std::vector<Node<double>>& p) {
          Node<double> c = ad::constant(tape, Tensor<double>({1}, {7.0}));
          return ad::add(c, ad::scale(p[0], 0.0));
        },
        {Tensor<double>({1}, {3.0})}, 1e-5, 1e-7);
    CHECK(r.passed());
    CHECK(r.max_abs_err == 0);
  }
}

TEST_CASE("grad_check reports non-finite losses instead of crashing") {
  const double nan = std::nan("");
  GradCheckReport r = grad_check(
      [&](Tape<double>& tape, std::vector<Node<double>>& p) {
        Node<double> bad = ad::constant(tape, Tensor<double>({1}, {nan}));
        return ad::sum_all(ad::hadamard(p[0], bad));
      },
      {Tensor<double>({1}, {1.0})}, 1e-5, 1e-4);
  CHECK(r.numerical_failure);
  CHECK_FALSE(r.passed());
}

TEST_CASE("broadcast gradients reduce to operand shapes") {
  Tape<double> tape;
  Node<double> k = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}), true);      // like weights
  Node<double> a = tape.leaf(Tensor<double>({3, 2, 2}, std::vector<double>(12, 0.5)), true);
  Node<double> prod = ad::hadamard(a, k);  // (3,2,2)
  Node<double> loss = ad::sum_all(ad::add(k, prod));
  tape.backward(loss);
  // The add broadcasts k over the batch of 3, so d/dk = 3 + sum_batch(a).
  for (int64_t i = 0; i < 4; ++i) CHECK(k.grad()[i] == doctest::Approx(4.5));
  for (int64_t i = 0; i < 12; ++i) CHECK(a.grad()[i] == k.value()[i % 4]);
}
