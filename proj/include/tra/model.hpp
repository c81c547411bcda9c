#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "tra/ops.hpp"

namespace tra {

struct ModelConfig {
  int height = 128;
  int width = 128;
  std::array<int, 3> encoder_channels = {16, 32, 64};
  int num_classes = 2;
  double dropout_rate = 0.0;
  uint64_t seed = 0;
  // Test hook: when false the first conv consumes the raw image without
  // coordinate channels.
  bool coord_channels = true;

  void validate() const;
};

// Appends two channels to x: normalized row coordinate 2i/(h-1) - 1 (zero
// when h == 1) and normalized column coordinate likewise. Original channels
// pass through unchanged (and differentiably).
Tensor coordconv_augment(Tape* tape, const Tensor& x);

// CoordConv-augmented three-stage encoder with FCN8-style three-scale score
// fusion. Parameters live in a flat list with stable names; the list order
// is the checkpoint order.
struct Model {
  ModelConfig config;
  std::vector<Tensor> params;
  std::vector<std::string> param_names;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  int64_t parameter_count() const;

  // Full-resolution h x w x num_classes logits. dropout_rng is consumed only
  // in training mode with a nonzero dropout rate.
  Tensor forward(Tape* tape, const Tensor& image, bool training,
                 std::mt19937_64* dropout_rng = nullptr) const;

  ProbabilityMap predict_probs(const Tensor& image) const;

  Model clone() const;  // deep-copies parameter values
};

Model build_model(const ModelConfig& config, std::mt19937_64& rng);

// Binary checkpoint: config echo + seed + flat parameter arrays in declared
// order. Write -> read round-trip is bit-exact.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace tra
