#pragma once

#include <random>

#include "tra/tensor.hpp"

namespace tra {

// Per-pixel class distributions produced by softmax_channels. Shape h x w x c;
// channel 0 is background by convention.
using ProbabilityMap = Tensor;

// All ops take an optional Tape. When tape is null, or no input requires
// grad, only the forward value is computed. Outputs require grad iff a tape
// is given and at least one differentiable input requires grad.

// input h x w x cin, kernel k x k x cin x cout, bias cout. k must be odd.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, int stride, int padding);

Tensor relu(Tape* tape, const Tensor& x);

// Per-channel normalization over the h*w spatial positions (population
// variance), then scale/shift by gamma/beta (each of length c).
Tensor channel_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                    const Tensor& beta, double epsilon = 1e-5);

// Zeroes whole channels with probability rate and rescales survivors by
// 1/(1-rate). Identity when training is false or rate is 0.
Tensor spatial_dropout(Tape* tape, const Tensor& x, double rate,
                       std::mt19937_64& rng, bool training);

// Align-corners-false bilinear upsampling by an integer factor.
Tensor bilinear_upsample(Tape* tape, const Tensor& x, int factor);

Tensor add(Tape* tape, const Tensor& x, const Tensor& y);
Tensor concat_channels(Tape* tape, const Tensor& x, const Tensor& y);

// Numerically stabilized per-pixel softmax over channels (c >= 2).
ProbabilityMap softmax_channels(Tape* tape, const Tensor& logits);

Tensor sum(Tape* tape, const Tensor& x);
Tensor mul(Tape* tape, const Tensor& x, const Tensor& y);  // elementwise

// One gathered log-probability term of a loss.
// weight * -log(p) when one_minus is false, weight * -log(1 - p) otherwise,
// where p = probs[(pixel)*c + channel].
struct LogGatherEntry {
  int pixel;    // flat spatial index y*w + x
  int channel;
  double weight;
  bool one_minus;
};

// Sum of entries over a probability map; scalar output. Gradients flow only
// through the gathered probabilities.
Tensor neg_log_gather(Tape* tape, const ProbabilityMap& probs,
                      const std::vector<LogGatherEntry>& entries);

}  // namespace tra
