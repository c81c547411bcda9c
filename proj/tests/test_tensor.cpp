#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tra/ops.hpp"
#include "tra/tensor.hpp"

using namespace tra;

TEST_CASE("tensor construction and accessors") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.ndim() == 2);
  CHECK(z.dim(1) == 3);
  for (int64_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  for (int64_t i = 0; i < 4; ++i) CHECK(f[i] == 2.5);

  Tensor s = Tensor::scalar(7.0);
  CHECK(s.value() == 7.0);

  Tensor v = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(v[3] == 4.0);
  CHECK_THROWS(Tensor::from({2, 2}, {1, 2, 3}));
}

TEST_CASE("shared storage vs clone") {
  Tensor a = Tensor::full({3}, 1.0, true);
  Tensor b = a;          // same storage
  Tensor c = a.clone(true);  // deep copy
  a[0] = 9.0;
  CHECK(b[0] == 9.0);
  CHECK(c[0] == 1.0);
  CHECK(a.same_storage(b));
  CHECK(!a.same_storage(c));
}

TEST_CASE("grad buffer lifecycle") {
  Tensor a = Tensor::full({2}, 1.0, true);
  a.grad()[0] = 3.0;
  CHECK(a.grad()[0] == 3.0);
  a.zero_grad();
  CHECK(a.grad()[0] == 0.0);

  Tensor no_grad = Tensor::full({2}, 1.0, false);
  CHECK(!no_grad.requires_grad());
}

TEST_CASE("all_finite") {
  Tensor a = Tensor::full({2}, 1.0);
  CHECK(a.all_finite());
  a[1] = std::nan("");
  CHECK(!a.all_finite());
  a[1] = std::numeric_limits<double>::infinity();
  CHECK(!a.all_finite());
}

TEST_CASE("tape backward on a small composite") {
  // loss = sum(x * x) + sum(x), so dloss/dx_i = 2 x_i + 1.
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Tape tape;
  Tensor sq = mul(&tape, x, x);
  Tensor loss = add(&tape, sum(&tape, sq), sum(&tape, x));
  CHECK(loss.value() == doctest::Approx(1 + 4 + 0.25 - 0.5).epsilon(1e-12));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(-3.0).epsilon(1e-12));
  CHECK(x.grad()[2] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("gradients accumulate across reused inputs") {
  Tensor x = Tensor::from({2}, {2.0, 3.0}, true);
  Tape tape;
  // loss = sum(x) + sum(x): gradient should be 2 everywhere.
  Tensor loss = add(&tape, sum(&tape, x), sum(&tape, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = mul(&tape, x, x);
  CHECK_THROWS(tape.backward(y));
}

TEST_CASE("finite_diff_check validates a composite") {
  Tensor x = Tensor::from({4}, {0.3, -1.2, 2.0, 0.7}, true);
  auto f = [](const Tensor& t, Tape* tape) {
    Tensor sq = mul(tape, t, t);
    return add(tape, sum(tape, sq), sum(tape, t));
  };
  CHECK(finite_diff_check(f, x, 1e-6) < 1e-6);
}

TEST_CASE("finite_diff_check flags a wrong gradient") {
  // relu has zero subgradient at 0; a point sitting exactly at a kink with a
  // large step gives a mismatch the checker must expose.
  Tensor x = Tensor::from({1}, {0.0}, true);
  auto f = [](const Tensor& t, Tape* tape) { return sum(tape, relu(tape, t)); };
  CHECK(finite_diff_check(f, x, 1e-3) > 0.1);
}
