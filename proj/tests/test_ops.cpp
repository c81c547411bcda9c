#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tra/kernels.hpp"
#include "tra/ops.hpp"

using namespace tra;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> u(lo, hi);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Nested-loop convolution written independently of src/kernels.cpp: iterates
// output pixels and kernel taps directly on HWC / [ky][kx][cin][cout] layouts.
std::vector<double> conv_oracle(const Tensor& input, const Tensor& kernel,
                                const Tensor& bias, int stride, int pad) {
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int k = kernel.dim(0), cout = kernel.dim(3);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(oh) * ow * cout);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int co = 0; co < cout; ++co) {
        double acc = bias[co];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride + ky - pad;
            const int ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int ci = 0; ci < cin; ++ci)
              acc += input[(static_cast<int64_t>(iy) * w + ix) * cin + ci] *
                     kernel[((static_cast<int64_t>(ky) * k + kx) * cin + ci) *
                                cout +
                            co];
          }
        out[(static_cast<size_t>(oy) * ow + ox) * cout + co] = acc;
      }
  return out;
}

// Weighted scalar readout so finite-difference checks see a non-uniform
// output gradient.
Tensor weighted_sum(Tape* tape, const Tensor& x, const Tensor& weights) {
  return sum(tape, mul(tape, x, weights));
}

}  // namespace

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(11);
  struct Case {
    int h, w, cin, cout, k, stride, pad;
  };
  for (const auto& c : {Case{8, 8, 1, 3, 3, 1, 1}, Case{9, 7, 2, 4, 3, 2, 1},
                        Case{5, 5, 3, 2, 1, 1, 0}, Case{8, 8, 2, 2, 5, 1, 2},
                        Case{6, 6, 1, 1, 3, 3, 1}}) {
    Tensor input = random_tensor({c.h, c.w, c.cin}, rng, false);
    Tensor kernel = random_tensor({c.k, c.k, c.cin, c.cout}, rng, false);
    Tensor bias = random_tensor({c.cout}, rng, false);
    Tensor out = conv2d(nullptr, input, kernel, bias, c.stride, c.pad);
    const auto expect = conv_oracle(input, kernel, bias, c.stride, c.pad);
    REQUIRE(out.size() == static_cast<int64_t>(expect.size()));
    for (int64_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-10));
  }
}

TEST_CASE("serial reference kernel agrees with the optimized path") {
  std::mt19937_64 rng(12);
  Tensor input = random_tensor({10, 9, 3}, rng, false);
  Tensor kernel = random_tensor({3, 3, 3, 5}, rng, false);
  Tensor bias = random_tensor({5}, rng, false);
  Tensor fast = conv2d(nullptr, input, kernel, bias, 1, 1);
  std::vector<double> slow(fast.size());
  kernels::ref::conv2d_forward(input.data(), 10, 9, 3, kernel.data(),
                               bias.data(), 3, 1, 1, 5, slow.data());
  for (int64_t i = 0; i < fast.size(); ++i)
    CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
}

TEST_CASE("conv2d rejects malformed arguments") {
  Tensor input = Tensor::zeros({4, 4, 2});
  Tensor bias = Tensor::zeros({3});
  CHECK_THROWS(conv2d(nullptr, input, Tensor::zeros({2, 2, 2, 3}), bias, 1, 1));
  CHECK_THROWS(conv2d(nullptr, input, Tensor::zeros({3, 3, 5, 3}), bias, 1, 1));
  CHECK_THROWS(
      conv2d(nullptr, input, Tensor::zeros({3, 3, 2, 3}), bias, 0, 1));
  CHECK_THROWS(
      conv2d(nullptr, input, Tensor::zeros({3, 3, 2, 3}), bias, 1, -1));
  CHECK_THROWS(conv2d(nullptr, input, Tensor::zeros({3, 3, 2, 3}),
                      Tensor::zeros({4}), 1, 1));
  // padded extent smaller than kernel
  CHECK_THROWS(conv2d(nullptr, Tensor::zeros({2, 2, 1}),
                      Tensor::zeros({5, 5, 1, 1}), Tensor::zeros({1}), 1, 0));
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(13);
  Tensor input = random_tensor({6, 5, 2}, rng, true);
  Tensor kernel = random_tensor({3, 3, 2, 3}, rng, true);
  Tensor bias = random_tensor({3}, rng, true);
  Tensor readout = random_tensor({3, 3, 3}, rng, false);  // stride-2 output

  auto wrt_input = [&](const Tensor& x, Tape* tape) {
    return weighted_sum(tape, conv2d(tape, x, kernel, bias, 2, 1), readout);
  };
  CHECK(finite_diff_check(wrt_input, input, 1e-6) < 1e-6);

  auto wrt_kernel = [&](const Tensor& kk, Tape* tape) {
    return weighted_sum(tape, conv2d(tape, input, kk, bias, 2, 1), readout);
  };
  CHECK(finite_diff_check(wrt_kernel, kernel, 1e-6) < 1e-7);

  auto wrt_bias = [&](const Tensor& b, Tape* tape) {
    return weighted_sum(tape, conv2d(tape, input, kernel, b, 2, 1), readout);
  };
  CHECK(finite_diff_check(wrt_bias, bias, 1e-6) < 1e-7);
}

TEST_CASE("relu forward and gradient") {
  Tensor x = Tensor::from({4}, {-1.0, 0.0, 0.5, 2.0}, true);
  Tensor y = relu(nullptr, x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.5);
  CHECK(y[3] == 2.0);

  std::mt19937_64 rng(14);
  // Keep sample points away from the kink for the finite-difference check.
  Tensor far = random_tensor({10}, rng, true, 0.2, 1.5);
  for (int64_t i = 0; i < far.size(); ++i)
    if (i % 2 == 0) far[i] = -far[i];
  Tensor readout = random_tensor({10}, rng, false);
  auto f = [&](const Tensor& t, Tape* tape) {
    return weighted_sum(tape, relu(tape, t), readout);
  };
  CHECK(finite_diff_check(f, far, 1e-6) < 1e-8);
}

TEST_CASE("channel_norm normalizes each channel") {
  std::mt19937_64 rng(15);
  Tensor x = random_tensor({4, 3, 2}, rng, false, -3.0, 5.0);
  Tensor gamma = Tensor::full({2}, 1.0);
  Tensor beta = Tensor::zeros({2});
  Tensor y = channel_norm(nullptr, x, gamma, beta);
  for (int ch = 0; ch < 2; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < 12; ++i) mean += y[i * 2 + ch];
    mean /= 12.0;
    for (int i = 0; i < 12; ++i) {
      const double d = y[i * 2 + ch] - mean;
      var += d * d;
    }
    var /= 12.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // epsilon shrinks var
  }
}

TEST_CASE("channel_norm gradients match finite differences") {
  std::mt19937_64 rng(16);
  Tensor x = random_tensor({3, 4, 2}, rng, true);
  Tensor gamma = random_tensor({2}, rng, true, 0.5, 1.5);
  Tensor beta = random_tensor({2}, rng, true);
  Tensor readout = random_tensor({3, 4, 2}, rng, false);

  auto wrt_x = [&](const Tensor& t, Tape* tape) {
    return weighted_sum(tape, channel_norm(tape, t, gamma, beta), readout);
  };
  CHECK(finite_diff_check(wrt_x, x, 1e-6) < 1e-6);

  auto wrt_gamma = [&](const Tensor& g, Tape* tape) {
    return weighted_sum(tape, channel_norm(tape, x, g, beta), readout);
  };
  CHECK(finite_diff_check(wrt_gamma, gamma, 1e-6) < 1e-7);

  auto wrt_beta = [&](const Tensor& b, Tape* tape) {
    return weighted_sum(tape, channel_norm(tape, x, gamma, b), readout);
  };
  CHECK(finite_diff_check(wrt_beta, beta, 1e-6) < 1e-7);
}

TEST_CASE("channel_norm needs 2 spatial positions") {
  CHECK_THROWS(channel_norm(nullptr, Tensor::zeros({1, 1, 3}),
                            Tensor::full({3}, 1.0), Tensor::zeros({3})));
}

TEST_CASE("spatial_dropout zeroes whole channels and rescales") {
  std::mt19937_64 rng(17);
  const int c = 1000;
  Tensor x = Tensor::full({2, 2, c}, 1.0);
  Tensor y = spatial_dropout(nullptr, x, 0.5, rng, true);
  int zeroed = 0;
  for (int ch = 0; ch < c; ++ch) {
    const double v = y[ch];
    // Whole-channel behavior: every spatial position agrees.
    for (int i = 1; i < 4; ++i) CHECK(y[i * c + ch] == v);
    if (v == 0.0)
      ++zeroed;
    else
      CHECK(v == doctest::Approx(2.0).epsilon(1e-12));
  }
  const double rate = zeroed / static_cast<double>(c);
  CHECK(rate > 0.45);
  CHECK(rate < 0.55);
}

TEST_CASE("spatial_dropout is the identity when disabled") {
  std::mt19937_64 rng(18);
  Tensor x = Tensor::full({2, 2, 3}, 1.5);
  Tensor eval_mode = spatial_dropout(nullptr, x, 0.5, rng, false);
  CHECK(eval_mode.same_storage(x));
  Tensor zero_rate = spatial_dropout(nullptr, x, 0.0, rng, true);
  CHECK(zero_rate.same_storage(x));
  CHECK_THROWS(spatial_dropout(nullptr, x, 1.0, rng, true));
}

TEST_CASE("bilinear_upsample factor 2 matches the closed form") {
  // 2x2 single channel; align-corners-false with factor 2 puts the outer ring
  // at the nearest source pixel and blends interior samples at 0.25/0.75.
  Tensor x = Tensor::from({2, 2, 1}, {0.0, 4.0, 8.0, 12.0});
  Tensor y = bilinear_upsample(nullptr, x, 2);
  REQUIRE(y.dim(0) == 4);
  REQUIRE(y.dim(1) == 4);
  const double expect[16] = {0.0, 1.0, 3.0, 4.0,  2.0, 3.0,  5.0,  6.0,
                             6.0, 7.0, 9.0, 10.0, 8.0, 9.0, 11.0, 12.0};
  for (int i = 0; i < 16; ++i)
    CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("bilinear_upsample preserves constants and is factor-1 identity") {
  Tensor c = Tensor::full({3, 5, 2}, 0.7);
  Tensor y = bilinear_upsample(nullptr, c, 3);
  for (int64_t i = 0; i < y.size(); ++i)
    CHECK(y[i] == doctest::Approx(0.7).epsilon(1e-12));
  Tensor same = bilinear_upsample(nullptr, c, 1);
  CHECK(same.same_storage(c));
}

TEST_CASE("bilinear_upsample gradient matches finite differences") {
  std::mt19937_64 rng(19);
  Tensor x = random_tensor({3, 4, 2}, rng, true);
  Tensor readout = random_tensor({6, 8, 2}, rng, false);
  auto f = [&](const Tensor& t, Tape* tape) {
    return weighted_sum(tape, bilinear_upsample(tape, t, 2), readout);
  };
  CHECK(finite_diff_check(f, x, 1e-6) < 1e-7);
}

TEST_CASE("add and mul validate shapes") {
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS(add(nullptr, a, b));
  CHECK_THROWS(mul(nullptr, a, b));
}

TEST_CASE("concat_channels layout and gradient") {
  Tensor a = Tensor::from({1, 2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from({1, 2, 1}, {9, 8}, true);
  Tape tape;
  Tensor y = concat_channels(&tape, a, b);
  REQUIRE(y.dim(2) == 3);
  CHECK(y[0] == 1);
  CHECK(y[1] == 2);
  CHECK(y[2] == 9);
  CHECK(y[3] == 3);
  CHECK(y[4] == 4);
  CHECK(y[5] == 8);

  std::mt19937_64 rng(20);
  Tensor readout = random_tensor({1, 2, 3}, rng, false);
  auto f = [&](const Tensor& t, Tape* tape2) {
    return weighted_sum(tape2, concat_channels(tape2, t, b), readout);
  };
  CHECK(finite_diff_check(f, a, 1e-6) < 1e-8);
}

TEST_CASE("softmax_channels produces per-pixel distributions") {
  std::mt19937_64 rng(21);
  Tensor logits = random_tensor({3, 3, 4}, rng, false, -30.0, 30.0);
  Tensor p = softmax_channels(nullptr, logits);
  for (int i = 0; i < 9; ++i) {
    double z = 0.0;
    for (int ch = 0; ch < 4; ++ch) {
      CHECK(p[i * 4 + ch] >= 0.0);
      z += p[i * 4 + ch];
    }
    CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Manual two-channel check.
  Tensor two = Tensor::from({1, 1, 2}, {1.0, 3.0});
  Tensor q = softmax_channels(nullptr, two);
  const double e = std::exp(-2.0);
  CHECK(q[0] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("softmax is stable under large logits") {
  Tensor big = Tensor::from({1, 1, 2}, {1000.0, 1001.0});
  Tensor p = softmax_channels(nullptr, big);
  CHECK(p.all_finite());
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("neg_log_gather value and gradient") {
  Tensor probs = Tensor::from({1, 2, 2}, {0.25, 0.75, 0.9, 0.1}, true);
  std::vector<LogGatherEntry> entries = {
      {0, 1, 1.0, false},  // -log 0.75
      {1, 0, 2.0, false},  // 2 * -log 0.9
      {1, 1, 0.5, true},   // 0.5 * -log(1 - 0.1)
  };
  Tape tape;
  Tensor loss = neg_log_gather(&tape, probs, entries);
  const double expect =
      -std::log(0.75) - 2.0 * std::log(0.9) - 0.5 * std::log(0.9);
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));
  tape.backward(loss);
  CHECK(probs.grad()[1] == doctest::Approx(-1.0 / 0.75).epsilon(1e-12));
  CHECK(probs.grad()[2] == doctest::Approx(-2.0 / 0.9).epsilon(1e-12));
  CHECK(probs.grad()[3] == doctest::Approx(0.5 / 0.9).epsilon(1e-12));
  CHECK(probs.grad()[0] == 0.0);

  CHECK_THROWS(neg_log_gather(nullptr, probs, {{4, 0, 1.0, false}}));
  CHECK_THROWS(neg_log_gather(nullptr, probs, {{0, 2, 1.0, false}}));
}

TEST_CASE("softmax + neg_log_gather gradient matches finite differences") {
  std::mt19937_64 rng(22);
  Tensor logits = random_tensor({4, 4, 2}, rng, true);
  std::vector<LogGatherEntry> entries = {{0, 1, 1.0, false},
                                         {5, 1, 0.5, false},
                                         {9, 0, 2.0, false},
                                         {15, 1, 1.0, true}};
  auto f = [&](const Tensor& t, Tape* tape) {
    return neg_log_gather(tape, softmax_channels(tape, t), entries);
  };
  CHECK(finite_diff_check(f, logits, 1e-6) < 1e-6);
}
