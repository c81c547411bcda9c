#pragma once

#include <cstdint>
#include <vector>

namespace tra::kernels {

// Output spatial extent of a convolution along one axis.
inline int conv_out_dim(int dim, int k, int stride, int pad) {
  return (dim + 2 * pad - k) / stride + 1;
}

// Optimized convolution path: im2col + BLAS dgemm.
//
// Layouts (all row-major, doubles):
//   input  [h][w][cin]
//   weight [k][k][cin][cout]
//   output [oh][ow][cout]
//   cols   [oh*ow][k*k*cin]
//
// The im2col/col2im loops are OpenMP-parallel with disjoint writes, and the
// dgemm runs single-threaded, so results are bit-deterministic.
void im2col(const double* input, int h, int w, int cin, int k, int stride,
            int pad, double* cols);

void conv2d_forward(const double* cols, const double* weight,
                    const double* bias, int oh, int ow, int cin, int cout,
                    int k, double* output);

// Accumulates (+=) into weight_grad / bias_grad; writes cols_grad.
void conv2d_backward_params(const double* cols, const double* out_grad,
                            int oh, int ow, int cin, int cout, int k,
                            double* weight_grad, double* bias_grad);
void conv2d_backward_cols(const double* out_grad, const double* weight,
                          int oh, int ow, int cin, int cout, int k,
                          double* cols_grad);
// Gather form of col2im; accumulates (+=) into input_grad.
void col2im_accumulate(const double* cols_grad, int h, int w, int cin, int k,
                       int stride, int pad, double* input_grad);

// Serial reference convolution: naive nested loops, no BLAS, no OpenMP.
// Kept as the oracle the optimized path is tested and benchmarked against.
namespace ref {
void conv2d_forward(const double* input, int h, int w, int cin,
                    const double* weight, const double* bias, int k,
                    int stride, int pad, int cout, double* output);
}  // namespace ref

}  // namespace tra::kernels
