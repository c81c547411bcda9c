#pragma once

#include <optional>
#include <string>

#include "tra/lcfcn.hpp"

namespace tra {

struct MeasurementLine {
  double top_row = 0.0, top_col = 0.0;
  double bottom_row = 0.0, bottom_col = 0.0;
  double length_px = 0.0;
  std::optional<double> length_mm;
};

enum class MeasureStatus { kOk, kDegenerate };

struct MeasurementResult {
  MeasurementLine line;
  int blob_count = 0;
  double confidence = 0.0;  // mean foreground prob over the selected blobs
  MeasureStatus status = MeasureStatus::kDegenerate;
};

// Class-1 blobs of the argmax mask, sorted by pixel count descending (ties by
// raster order of first pixel). Watershed/FP fields are not populated.
BlobSet extract_blobs(const ProbabilityMap& probs);

// Unweighted mean of member pixel coordinates. Throws on an empty blob.
std::pair<double, double> blob_centroid(const std::vector<int>& pixels, int w);

// Centroids of the two largest blobs, ordered so top_row <= bottom_row.
// Throws std::runtime_error when fewer than 2 blobs exist.
MeasurementLine select_endpoint_pair(const BlobSet& blobs);

MeasurementLine make_line(double top_row, double top_col, double bottom_row,
                          double bottom_col);

// Fills length_mm from a positive scale; throws on non-positive scale.
MeasurementLine thickness(MeasurementLine line,
                          std::optional<double> mm_per_pixel);

// Full pipeline: extract, select, measure. Degenerate (< 2 blobs) results
// come back with status kDegenerate instead of throwing.
MeasurementResult measure(const ProbabilityMap& probs,
                          std::optional<double> mm_per_pixel);

// Writes an RGB PNG of the grayscale image with the predicted line in green
// and the ground-truth line in red.
void render_overlay(const std::string& path, const std::vector<double>& image,
                    int h, int w, const MeasurementLine& predicted,
                    const MeasurementLine* truth);

}  // namespace tra
