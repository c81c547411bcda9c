#include "tra/ops.hpp"

#include <algorithm>
#include <memory>
#include <cmath>

#include "tra/kernels.hpp"

namespace tra {

namespace {

bool tracked(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void check_3d(const Tensor& t, const char* what) {
  if (t.ndim() != 3)
    throw std::invalid_argument(std::string(what) + ": expected h x w x c");
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, int stride, int padding) {
  check_3d(input, "conv2d input");
  if (kernel.ndim() != 4)
    throw std::invalid_argument("conv2d: kernel must be k x k x cin x cout");
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int k = kernel.dim(0);
  const int cout = kernel.dim(3);
  if (kernel.dim(1) != k)
    throw std::invalid_argument("conv2d: kernel must be square");
  if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (kernel.dim(2) != cin)
    throw std::invalid_argument(
        "conv2d: kernel input channels (" + std::to_string(kernel.dim(2)) +
        ") do not match input channels (" + std::to_string(cin) + ")");
  if (bias.ndim() != 1 || bias.dim(0) != cout)
    throw std::invalid_argument("conv2d: bias must have cout entries");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  if (h + 2 * padding < k || w + 2 * padding < k)
    throw std::invalid_argument("conv2d: padded extent smaller than kernel");

  const int oh = kernels::conv_out_dim(h, k, stride, padding);
  const int ow = kernels::conv_out_dim(w, k, stride, padding);
  const int kk = k * k * cin;

  // im2col writes every element (pad positions included), so the buffer is
  // allocated uninitialized.
  auto cols = std::shared_ptr<double[]>(
      new double[static_cast<size_t>(oh) * ow * kk]);
  kernels::im2col(input.data(), h, w, cin, k, stride, padding, cols.get());

  const bool track = tracked(tape, {&input, &kernel, &bias});
  Tensor out({oh, ow, cout}, track);
  kernels::conv2d_forward(cols.get(), kernel.data(), bias.data(), oh, ow,
                          cin, cout, k, out.data());

  if (track) {
    Tensor in = input, ker = kernel, b = bias;
    tape->record([in, ker, b, out, cols, h, w, cin, cout, k, oh, ow, kk,
                  stride, padding]() mutable {
      const double* gout = out.grad();
      if (ker.requires_grad()) {
        kernels::conv2d_backward_params(cols.get(), gout, oh, ow, cin, cout,
                                        k, ker.grad(), nullptr);
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
          for (int c = 0; c < cout; ++c) gb[c] += gout[i * cout + c];
      }
      if (in.requires_grad()) {
        std::unique_ptr<double[]> gcols(
            new double[static_cast<size_t>(oh) * ow * kk]);
        kernels::conv2d_backward_cols(gout, ker.data(), oh, ow, cin, cout, k,
                                      gcols.get());
        kernels::col2im_accumulate(gcols.get(), h, w, cin, k, stride, padding,
                                   in.grad());
      }
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
  const bool track = tracked(tape, {&x});
  Tensor out(x.shape(), track);
  const double* xv = x.data();
  double* ov = out.data();
  for (int64_t i = 0; i < x.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (track) {
    Tensor in = x;
    tape->record([in, out]() mutable {
      const double* g = out.grad();
      const double* xv = in.data();
      double* gx = in.grad();
      for (int64_t i = 0; i < in.size(); ++i)
        if (xv[i] > 0.0) gx[i] += g[i];  // subgradient at 0 is 0
    });
  }
  return out;
}

Tensor channel_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                    const Tensor& beta, double epsilon) {
  check_3d(x, "channel_norm");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int64_t n = static_cast<int64_t>(h) * w;
  if (n < 2)
    throw std::invalid_argument(
        "channel_norm: needs at least 2 spatial positions");
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 ||
      beta.dim(0) != c)
    throw std::invalid_argument("channel_norm: gamma/beta must have c entries");

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  const bool track = tracked(tape, {&x, &gamma, &beta});
  Tensor out(x.shape(), track);

  // Interleaved HWC layout: accumulate every channel in one sweep through
  // memory instead of one strided pass per channel.
  const double* xv = x.data();
  const double* gv = gamma.data();
  const double* bv = beta.data();
  double* ov = out.data();
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) mean[ch] += xv[i * c + ch];
  for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double d = xv[i * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  for (int ch = 0; ch < c; ++ch) {
    var[ch] /= static_cast<double>(n);
    (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] + epsilon);
  }
  for (int64_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double xh = (xv[i * c + ch] - mean[ch]) * (*inv_std)[ch];
      (*xhat)[i * c + ch] = xh;
      ov[i * c + ch] = xh * gv[ch] + bv[ch];
    }

  if (track) {
    Tensor in = x, ga = gamma, be = beta;
    tape->record([in, ga, be, out, xhat, inv_std, n, c]() mutable {
      const double* g = out.grad();
      std::vector<double> sum_g(c, 0.0), sum_gxh(c, 0.0);
      for (int64_t i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          sum_g[ch] += g[i * c + ch];
          sum_gxh[ch] += g[i * c + ch] * (*xhat)[i * c + ch];
        }
      for (int ch = 0; ch < c; ++ch) {
        if (ga.requires_grad()) ga.grad()[ch] += sum_gxh[ch];
        if (be.requires_grad()) be.grad()[ch] += sum_g[ch];
      }
      if (in.requires_grad()) {
        std::vector<double> scale(c), mg(c), mgxh(c);
        for (int ch = 0; ch < c; ++ch) {
          scale[ch] = ga.data()[ch] * (*inv_std)[ch];
          mg[ch] = sum_g[ch] / static_cast<double>(n);
          mgxh[ch] = sum_gxh[ch] / static_cast<double>(n);
        }
        double* gx = in.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch)
            gx[i * c + ch] += scale[ch] * (g[i * c + ch] - mg[ch] -
                                           (*xhat)[i * c + ch] * mgxh[ch]);
      }
    });
  }
  return out;
}

Tensor spatial_dropout(Tape* tape, const Tensor& x, double rate,
                       std::mt19937_64& rng, bool training) {
  check_3d(x, "spatial_dropout");
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("spatial_dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;

  const int c = x.dim(2);
  const int64_t n = x.size() / c;
  auto scale = std::make_shared<std::vector<double>>(c);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int ch = 0; ch < c; ++ch)
    (*scale)[ch] = uni(rng) < rate ? 0.0 : keep_scale;

  const bool track = tracked(tape, {&x});
  Tensor out(x.shape(), track);
  const double* xv = x.data();
  double* ov = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      ov[i * c + ch] = xv[i * c + ch] * (*scale)[ch];

  if (track) {
    Tensor in = x;
    tape->record([in, out, scale, n, c]() mutable {
      const double* g = out.grad();
      double* gx = in.grad();
      for (int64_t i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
          gx[i * c + ch] += g[i * c + ch] * (*scale)[ch];
    });
  }
  return out;
}

Tensor bilinear_upsample(Tape* tape, const Tensor& x, int factor) {
  check_3d(x, "bilinear_upsample");
  if (factor < 1)
    throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
  if (factor == 1) return x;

  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int oh = h * factor, ow = w * factor;
  const bool track = tracked(tape, {&x});
  Tensor out({oh, ow, c}, track);

  const double inv = 1.0 / factor;
  const double* xv = x.data();
  double* ov = out.data();
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    double sy = (oy + 0.5) * inv - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = sy - y0;
    for (int ox = 0; ox < ow; ++ox) {
      double sx = (ox + 0.5) * inv - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double v00 = xv[(static_cast<int64_t>(y0) * w + x0) * c + ch];
        const double v01 = xv[(static_cast<int64_t>(y0) * w + x1) * c + ch];
        const double v10 = xv[(static_cast<int64_t>(y1) * w + x0) * c + ch];
        const double v11 = xv[(static_cast<int64_t>(y1) * w + x1) * c + ch];
        ov[(static_cast<int64_t>(oy) * ow + ox) * c + ch] =
            (1 - wy) * ((1 - wx) * v00 + wx * v01) +
            wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }

  if (track) {
    Tensor in = x;
    tape->record([in, out, h, w, c, oh, ow, inv]() mutable {
      const double* g = out.grad();
      double* gx = in.grad();
      // Serial scatter keeps accumulation order deterministic.
      for (int oy = 0; oy < oh; ++oy) {
        double sy = std::clamp((oy + 0.5) * inv - 0.5, 0.0,
                               static_cast<double>(h - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = sy - y0;
        for (int ox = 0; ox < ow; ++ox) {
          double sx = std::clamp((ox + 0.5) * inv - 0.5, 0.0,
                                 static_cast<double>(w - 1));
          const int x0 = static_cast<int>(sx);
          const int x1 = std::min(x0 + 1, w - 1);
          const double wx = sx - x0;
          for (int ch = 0; ch < c; ++ch) {
            const double go = g[(static_cast<int64_t>(oy) * ow + ox) * c + ch];
            gx[(static_cast<int64_t>(y0) * w + x0) * c + ch] +=
                (1 - wy) * (1 - wx) * go;
            gx[(static_cast<int64_t>(y0) * w + x1) * c + ch] +=
                (1 - wy) * wx * go;
            gx[(static_cast<int64_t>(y1) * w + x0) * c + ch] +=
                wy * (1 - wx) * go;
            gx[(static_cast<int64_t>(y1) * w + x1) * c + ch] += wy * wx * go;
          }
        }
      }
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape())
    throw std::invalid_argument("add: shape mismatch");
  const bool track = tracked(tape, {&x, &y});
  Tensor out(x.shape(), track);
  const double* xv = x.data();
  const double* yv = y.data();
  double* ov = out.data();
  for (int64_t i = 0; i < x.size(); ++i) ov[i] = xv[i] + yv[i];
  if (track) {
    Tensor a = x, b = y;
    tape->record([a, b, out]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* ga = a.grad();
        for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (int64_t i = 0; i < b.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor concat_channels(Tape* tape, const Tensor& x, const Tensor& y) {
  check_3d(x, "concat_channels");
  check_3d(y, "concat_channels");
  if (x.dim(0) != y.dim(0) || x.dim(1) != y.dim(1))
    throw std::invalid_argument("concat_channels: spatial mismatch");
  const int h = x.dim(0), w = x.dim(1);
  const int c1 = x.dim(2), c2 = y.dim(2);
  const bool track = tracked(tape, {&x, &y});
  Tensor out({h, w, c1 + c2}, track);
  const double* xv = x.data();
  const double* yv = y.data();
  double* ov = out.data();
  const int64_t n = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c1; ++ch)
      ov[i * (c1 + c2) + ch] = xv[i * c1 + ch];
    for (int ch = 0; ch < c2; ++ch)
      ov[i * (c1 + c2) + c1 + ch] = yv[i * c2 + ch];
  }
  if (track) {
    Tensor a = x, b = y;
    tape->record([a, b, out, n, c1, c2]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* ga = a.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int ch = 0; ch < c1; ++ch)
            ga[i * c1 + ch] += g[i * (c1 + c2) + ch];
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int ch = 0; ch < c2; ++ch)
            gb[i * c2 + ch] += g[i * (c1 + c2) + c1 + ch];
      }
    });
  }
  return out;
}

ProbabilityMap softmax_channels(Tape* tape, const Tensor& logits) {
  check_3d(logits, "softmax_channels");
  const int c = logits.dim(2);
  if (c < 2)
    throw std::invalid_argument("softmax_channels: needs at least 2 channels");
  const int64_t n = logits.size() / c;
  const bool track = tracked(tape, {&logits});
  Tensor out(logits.shape(), track);
  const double* xv = logits.data();
  double* ov = out.data();
  for (int64_t i = 0; i < n; ++i) {
    double m = xv[i * c];
    for (int ch = 1; ch < c; ++ch) m = std::max(m, xv[i * c + ch]);
    double z = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double e = std::exp(xv[i * c + ch] - m);
      ov[i * c + ch] = e;
      z += e;
    }
    for (int ch = 0; ch < c; ++ch) ov[i * c + ch] /= z;
  }
  if (track) {
    Tensor in = logits;
    tape->record([in, out, n, c]() mutable {
      const double* g = out.grad();
      const double* p = out.data();
      double* gx = in.grad();
      for (int64_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch) dot += g[i * c + ch] * p[i * c + ch];
        for (int ch = 0; ch < c; ++ch)
          gx[i * c + ch] += p[i * c + ch] * (g[i * c + ch] - dot);
      }
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  const bool track = tracked(tape, {&x});
  Tensor out({1}, track);
  double acc = 0.0;
  const double* xv = x.data();
  for (int64_t i = 0; i < x.size(); ++i) acc += xv[i];
  out[0] = acc;
  if (track) {
    Tensor in = x;
    tape->record([in, out]() mutable {
      const double g = out.grad()[0];
      double* gx = in.grad();
      for (int64_t i = 0; i < in.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape())
    throw std::invalid_argument("mul: shape mismatch");
  const bool track = tracked(tape, {&x, &y});
  Tensor out(x.shape(), track);
  const double* xv = x.data();
  const double* yv = y.data();
  double* ov = out.data();
  for (int64_t i = 0; i < x.size(); ++i) ov[i] = xv[i] * yv[i];
  if (track) {
    Tensor a = x, b = y;
    tape->record([a, b, out]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* ga = a.grad();
        const double* bv = b.data();
        for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        const double* av = a.data();
        for (int64_t i = 0; i < b.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor neg_log_gather(Tape* tape, const ProbabilityMap& probs,
                      const std::vector<LogGatherEntry>& entries) {
  check_3d(probs, "neg_log_gather");
  const int c = probs.dim(2);
  const int64_t n = probs.size() / c;
  for (const auto& e : entries) {
    if (e.pixel < 0 || e.pixel >= n || e.channel < 0 || e.channel >= c)
      throw std::out_of_range("neg_log_gather: entry out of bounds");
  }
  const bool track = tracked(tape, {&probs});
  Tensor out({1}, track);
  const double* pv = probs.data();
  double acc = 0.0;
  for (const auto& e : entries) {
    const double p = pv[static_cast<int64_t>(e.pixel) * c + e.channel];
    acc += e.weight * -std::log(e.one_minus ? 1.0 - p : p);
  }
  out[0] = acc;
  if (track) {
    Tensor in = probs;
    auto ents = std::make_shared<std::vector<LogGatherEntry>>(entries);
    tape->record([in, out, ents, c]() mutable {
      const double g = out.grad()[0];
      const double* pv = in.data();
      double* gp = in.grad();
      for (const auto& e : *ents) {
        const int64_t idx = static_cast<int64_t>(e.pixel) * c + e.channel;
        if (e.one_minus)
          gp[idx] += g * e.weight / (1.0 - pv[idx]);
        else
          gp[idx] -= g * e.weight / pv[idx];
      }
    });
  }
  return out;
}

}  // namespace tra
