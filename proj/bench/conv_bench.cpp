// Compares the serial reference convolution against the im2col + dgemm path
// on model-sized problems and checks they agree.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "tra/kernels.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Case {
  int h, w, cin, cout, k, stride, pad;
};

void run_case(const Case& c, std::mt19937_64& rng) {
  using namespace tra::kernels;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> input(size_t(c.h) * c.w * c.cin);
  std::vector<double> weight(size_t(c.k) * c.k * c.cin * c.cout);
  std::vector<double> bias(c.cout);
  for (auto& v : input) v = u(rng);
  for (auto& v : weight) v = u(rng);
  for (auto& v : bias) v = u(rng);

  const int oh = conv_out_dim(c.h, c.k, c.stride, c.pad);
  const int ow = conv_out_dim(c.w, c.k, c.stride, c.pad);
  std::vector<double> out_ref(size_t(oh) * ow * c.cout);
  std::vector<double> out_fast(out_ref.size());
  std::vector<double> cols(size_t(oh) * ow * c.k * c.k * c.cin);

  const int reps = 8;
  auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r)
    ref::conv2d_forward(input.data(), c.h, c.w, c.cin, weight.data(),
                        bias.data(), c.k, c.stride, c.pad, c.cout,
                        out_ref.data());
  const double t_ref = seconds_since(t0) / reps;

  t0 = Clock::now();
  for (int r = 0; r < reps; ++r) {
    im2col(input.data(), c.h, c.w, c.cin, c.k, c.stride, c.pad, cols.data());
    conv2d_forward(cols.data(), weight.data(), bias.data(), oh, ow, c.cin,
                   c.cout, c.k, out_fast.data());
  }
  const double t_fast = seconds_since(t0) / reps;

  double max_abs = 0.0;
  for (size_t i = 0; i < out_ref.size(); ++i)
    max_abs = std::max(max_abs, std::fabs(out_ref[i] - out_fast[i]));

  std::printf(
      "%3dx%-3d cin=%-3d cout=%-3d k=%d s=%d | ref %8.3f ms | "
      "im2col+gemm %8.3f ms | speedup %5.1fx | max |diff| %.3e\n",
      c.h, c.w, c.cin, c.cout, c.k, c.stride, t_ref * 1e3, t_fast * 1e3,
      t_ref / t_fast, max_abs);
}

}  // namespace

int main() {
  std::mt19937_64 rng(42);
  const Case cases[] = {
      {128, 128, 3, 16, 3, 1, 1},   // first encoder conv (image + coords)
      {128, 128, 16, 16, 3, 1, 1},  // stage 0 body
      {128, 128, 16, 16, 3, 2, 1},  // stage 0 downsample
      {64, 64, 16, 32, 3, 1, 1},    // stage 1
      {32, 32, 32, 64, 3, 1, 1},    // stage 2
      {16, 16, 64, 2, 1, 1, 0},     // score head
  };
  for (const auto& c : cases) run_case(c, rng);
  return 0;
}
