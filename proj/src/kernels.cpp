#include "tra/kernels.hpp"

#include <cblas.h>

#include <cstring>
#include <mutex>

namespace tra::kernels {

namespace {
void ensure_single_threaded_blas() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}
}  // namespace

void im2col(const double* input, int h, int w, int cin, int k, int stride,
            int pad, double* cols) {
  const int oh = conv_out_dim(h, k, stride, pad);
  const int ow = conv_out_dim(w, k, stride, pad);
  const int kk = k * k * cin;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* row = cols + (static_cast<int64_t>(oy) * ow + ox) * kk;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pad;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pad;
          double* dst = row + (ky * k + kx) * cin;
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
            std::memcpy(dst, input + (static_cast<int64_t>(iy) * w + ix) * cin,
                        sizeof(double) * cin);
          } else {
            std::memset(dst, 0, sizeof(double) * cin);
          }
        }
      }
    }
  }
}

void conv2d_forward(const double* cols, const double* weight,
                    const double* bias, int oh, int ow, int cin, int cout,
                    int k, double* output) {
  ensure_single_threaded_blas();
  const int m = oh * ow;
  const int kk = k * k * cin;
  // output = cols (m x kk) * weight (kk x cout)
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, cout, kk, 1.0,
              cols, kk, weight, cout, 0.0, output, cout);
  if (bias) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      double* row = output + static_cast<int64_t>(i) * cout;
      for (int c = 0; c < cout; ++c) row[c] += bias[c];
    }
  }
}

void conv2d_backward_params(const double* cols, const double* out_grad,
                            int oh, int ow, int cin, int cout, int k,
                            double* weight_grad, double* bias_grad) {
  ensure_single_threaded_blas();
  const int m = oh * ow;
  const int kk = k * k * cin;
  // weight_grad += cols^T (kk x m) * out_grad (m x cout)
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kk, cout, m, 1.0, cols,
              kk, out_grad, cout, 1.0, weight_grad, cout);
  if (bias_grad) {
    for (int i = 0; i < m; ++i) {
      const double* row = out_grad + static_cast<int64_t>(i) * cout;
      for (int c = 0; c < cout; ++c) bias_grad[c] += row[c];
    }
  }
}

void conv2d_backward_cols(const double* out_grad, const double* weight,
                          int oh, int ow, int cin, int cout, int k,
                          double* cols_grad) {
  ensure_single_threaded_blas();
  const int m = oh * ow;
  const int kk = k * k * cin;
  // cols_grad = out_grad (m x cout) * weight^T (cout x kk)
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, kk, cout, 1.0,
              out_grad, cout, weight, cout, 0.0, cols_grad, kk);
}

void col2im_accumulate(const double* cols_grad, int h, int w, int cin, int k,
                       int stride, int pad, double* input_grad) {
  const int oh = conv_out_dim(h, k, stride, pad);
  const int ow = conv_out_dim(w, k, stride, pad);
  const int kk = k * k * cin;
#pragma omp parallel for schedule(static)
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      double* g = input_grad + (static_cast<int64_t>(iy) * w + ix) * cin;
      for (int ky = 0; ky < k; ++ky) {
        const int oy_num = iy + pad - ky;
        if (oy_num < 0 || oy_num % stride != 0) continue;
        const int oy = oy_num / stride;
        if (oy >= oh) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ox_num = ix + pad - kx;
          if (ox_num < 0 || ox_num % stride != 0) continue;
          const int ox = ox_num / stride;
          if (ox >= ow) continue;
          const double* src = cols_grad +
                              (static_cast<int64_t>(oy) * ow + ox) * kk +
                              (ky * k + kx) * cin;
          for (int c = 0; c < cin; ++c) g[c] += src[c];
        }
      }
    }
  }
}

namespace ref {

void conv2d_forward(const double* input, int h, int w, int cin,
                    const double* weight, const double* bias, int k,
                    int stride, int pad, int cout, double* output) {
  const int oh = conv_out_dim(h, k, stride, pad);
  const int ow = conv_out_dim(w, k, stride, pad);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int co = 0; co < cout; ++co) {
        double acc = bias ? bias[co] : 0.0;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            for (int ci = 0; ci < cin; ++ci) {
              acc += input[(static_cast<int64_t>(iy) * w + ix) * cin + ci] *
                     weight[((ky * k + kx) * cin + ci) * cout + co];
            }
          }
        }
        output[(static_cast<int64_t>(oy) * ow + ox) * cout + co] = acc;
      }
    }
  }
}

}  // namespace ref

}  // namespace tra::kernels
