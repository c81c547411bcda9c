#pragma once

#include <optional>
#include <random>
#include <string>

#include "tra/image_io.hpp"
#include "tra/lcfcn.hpp"

namespace tra {

// One image with its two caliper-endpoint annotations.
struct Sample {
  std::string id;
  GrayImage image;
  Point top, bottom;  // class 1; top.row < bottom.row
  double mm_per_pixel = 1.0;
  std::string state;  // "resting" | "contracted"

  void validate() const;
};

struct Rect {
  int row = 0, col = 0, h = 0, w = 0;
};

struct DatasetConfig {
  std::optional<Rect> roi;
  int target_h = 128, target_w = 128;
};

// Model-ready view of a sample after resize + normalization.
struct Preprocessed {
  Tensor input;        // target_h x target_w x 1, normalized
  AnnotationSet ann;   // integer endpoint pixels in model space
  // Exact (unrounded) endpoint coordinates in model space.
  double top_row = 0, top_col = 0, bottom_row = 0, bottom_col = 0;
  double mm_per_pixel = 1.0;  // geometric mean of the two axis scales
  double anisotropy = 1.0;    // row-axis mm scale / col-axis mm scale
  std::vector<double> resized01;  // pre-normalization [0,1] image
};

// Dataset layout: images/<id>.png + annotations/<id>.json
// {id, top: [row, col], bottom: [row, col], mm_per_pixel, state},
// optional dataset.toml, and (for synthetic sets) truth.csv.
std::vector<Sample> load_dataset(const std::string& root);
void save_dataset(const std::string& root, const std::vector<Sample>& samples);
DatasetConfig load_dataset_config(const std::string& root);

Sample crop_roi(const Sample& sample, const Rect& roi);

std::vector<double> resize_bilinear(const std::vector<double>& src, int h,
                                    int w, int th, int tw);

// Fixed grayscale normalization applied after resize.
inline double normalize_intensity(double v01) { return (v01 - 0.449) / 0.226; }

Preprocessed preprocess(const Sample& sample, int target_h, int target_w);

struct PhotometricParams {
  double contrast = 1.0;   // scale about the image mean
  double brightness = 0.0; // additive shift
  double gamma = 1.0;      // x^gamma
};

std::vector<double> apply_photometric(const std::vector<double>& img01,
                                      const PhotometricParams& p);
// Random contrast in [0.8, 1.2], brightness in [-0.1, 0.1], gamma in
// [0.8, 1.25]. Operates on the pre-normalization [0,1] image.
std::vector<double> augment(const std::vector<double>& img01,
                            std::mt19937_64& rng);

// Synthetic scenes: speckled dark background, two bright curved bands,
// endpoints on the band inner edges of a random column. Alternates
// resting / contracted thickness modes. Images are quantized to 8-bit
// levels so in-memory samples match a PNG round-trip.
std::vector<Sample> synth_generate(int count, int h, int w,
                                   std::mt19937_64& rng);

struct FoldPlan {
  int k = 0;
  std::vector<std::vector<std::string>> test_ids, val_ids, train_ids;
};

// Shuffles once, chunks, and rotates: fold f tests chunk f and validates
// chunk (f+1) mod k. Test chunks partition the id list.
FoldPlan kfold_split(std::vector<std::string> ids, int k,
                     std::mt19937_64& rng);

}  // namespace tra
