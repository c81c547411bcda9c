#pragma once

#include <set>
#include <vector>

#include "tra/ops.hpp"

namespace tra {

// A single ground-truth point. Class ids start at 1; 0 is background.
struct Point {
  int row = 0;
  int col = 0;
  int cls = 1;
};

struct AnnotationSet {
  std::vector<Point> points;
  int num_classes = 2;  // including background

  // Classes occurring in points / non-background classes with no points.
  std::set<int> present_classes() const;
  std::set<int> absent_classes() const;
  void validate(int h, int w) const;
};

// Connected foreground components of one class. Blob ids are 1-based,
// numbered by raster order of each component's first pixel; labels[i] == 0
// means background. Pixel indices are flat y*w + x.
struct BlobSet {
  int h = 0, w = 0;
  int cls = 1;
  std::vector<int> labels;
  int count = 0;
  std::vector<std::vector<int>> blob_pixels;   // [blob id - 1]
  std::vector<int> annotation_count;           // alpha_k, [blob id - 1]
  std::vector<int> split_boundaries;           // T_b, sorted flat indices
  std::vector<int> false_positive_pixels;      // B_fp, sorted flat indices
};

// Deterministic connected-component labeling (components numbered by raster
// order of first pixel, background = 0). connectivity must be 4 or 8.
std::pair<std::vector<int>, int> connected_components(
    const std::vector<uint8_t>& mask, int h, int w, int connectivity);

// Per-pixel argmax decision rule; ties break toward the lower channel index.
std::vector<uint8_t> foreground_mask(const ProbabilityMap& probs, int cls);

// Seeded priority-flood watershed lines. Floods from the seeds in order of
// descending elevation (tie-break: raster order); a pixel whose already
// labeled 4-neighbors span more than one basin becomes a line pixel. domain,
// when non-empty, restricts flooding to pixels where domain[i] != 0. Returns
// sorted line pixel indices.
std::vector<int> watershed_lines(const std::vector<double>& elevation, int h,
                                 int w, const std::vector<Point>& seeds,
                                 const std::vector<uint8_t>& domain = {});

// Components + per-blob annotation counts + T_b + B_fp for one class.
BlobSet derive_blobs(const ProbabilityMap& probs, const AnnotationSet& ann,
                     int cls);

// T_b for a precomputed BlobSet: global watershed lines over the whole image
// plus, per blob with >= 2 annotations, lines of a watershed restricted to
// that blob. Seeds are the annotation points of the blob's class.
std::vector<int> watershed_split(const ProbabilityMap& probs,
                                 const AnnotationSet& ann,
                                 const BlobSet& blobs);

// The four LCFCN loss terms. Blob structure is non-differentiable; gradients
// flow only through the gathered log-probabilities.
Tensor image_level_loss(Tape* tape, const ProbabilityMap& probs,
                        const AnnotationSet& ann);
Tensor point_level_loss(Tape* tape, const ProbabilityMap& probs,
                        const AnnotationSet& ann);
Tensor split_level_loss(Tape* tape, const ProbabilityMap& probs,
                        const AnnotationSet& ann, const BlobSet& blobs);
Tensor false_positive_loss(Tape* tape, const ProbabilityMap& probs,
                           const BlobSet& blobs);

struct LossBreakdown {
  double image = 0.0;
  double point = 0.0;
  double split = 0.0;
  double false_positive = 0.0;
  double total = 0.0;
};

// Total loss over freshly derived blob structure for every non-background
// class.
Tensor lcfcn_loss(Tape* tape, const ProbabilityMap& probs,
                  const AnnotationSet& ann,
                  LossBreakdown* breakdown = nullptr);

}  // namespace tra
