#include "tra/measure.hpp"

#include <algorithm>
#include <cmath>

#include "tra/image_io.hpp"

namespace tra {

BlobSet extract_blobs(const ProbabilityMap& probs) {
  BlobSet bs;
  bs.h = probs.dim(0);
  bs.w = probs.dim(1);
  bs.cls = 1;
  const auto mask = foreground_mask(probs, 1);
  auto [labels, count] = connected_components(mask, bs.h, bs.w, 4);
  std::vector<std::vector<int>> pixels(count);
  for (int i = 0; i < bs.h * bs.w; ++i)
    if (labels[i] > 0) pixels[labels[i] - 1].push_back(i);

  // Sort blob ids by size descending; ties keep raster order (stable sort on
  // ids already ordered by first pixel).
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pixels[a].size() > pixels[b].size();
  });

  bs.count = count;
  bs.labels.assign(labels.size(), 0);
  bs.blob_pixels.resize(count);
  for (int rank = 0; rank < count; ++rank) {
    bs.blob_pixels[rank] = std::move(pixels[order[rank]]);
    for (int i : bs.blob_pixels[rank]) bs.labels[i] = rank + 1;
  }
  bs.annotation_count.assign(count, 0);
  return bs;
}

std::pair<double, double> blob_centroid(const std::vector<int>& pixels,
                                        int w) {
  if (pixels.empty()) throw std::invalid_argument("blob_centroid: empty blob");
  double r = 0.0, c = 0.0;
  for (int i : pixels) {
    r += i / w;
    c += i % w;
  }
  const double n = static_cast<double>(pixels.size());
  return {r / n, c / n};
}

MeasurementLine make_line(double top_row, double top_col, double bottom_row,
                          double bottom_col) {
  MeasurementLine line;
  if (bottom_row < top_row) {
    std::swap(top_row, bottom_row);
    std::swap(top_col, bottom_col);
  }
  line.top_row = top_row;
  line.top_col = top_col;
  line.bottom_row = bottom_row;
  line.bottom_col = bottom_col;
  line.length_px = std::hypot(bottom_row - top_row, bottom_col - top_col);
  return line;
}

MeasurementLine select_endpoint_pair(const BlobSet& blobs) {
  if (blobs.count < 2)
    throw std::runtime_error("unmeasurable: " + std::to_string(blobs.count) +
                             " blobs found");
  const auto a = blob_centroid(blobs.blob_pixels[0], blobs.w);
  const auto b = blob_centroid(blobs.blob_pixels[1], blobs.w);
  return make_line(a.first, a.second, b.first, b.second);
}

MeasurementLine thickness(MeasurementLine line,
                          std::optional<double> mm_per_pixel) {
  if (mm_per_pixel) {
    if (*mm_per_pixel <= 0.0)
      throw std::invalid_argument("thickness: mm_per_pixel must be positive");
    line.length_mm = line.length_px * *mm_per_pixel;
  } else {
    line.length_mm.reset();
  }
  return line;
}

MeasurementResult measure(const ProbabilityMap& probs,
                          std::optional<double> mm_per_pixel) {
  MeasurementResult res;
  const BlobSet blobs = extract_blobs(probs);
  res.blob_count = blobs.count;
  if (blobs.count < 2) {
    res.status = MeasureStatus::kDegenerate;
    return res;
  }
  res.line = thickness(select_endpoint_pair(blobs), mm_per_pixel);
  const int c = probs.dim(2);
  const double* pv = probs.data();
  double conf = 0.0;
  int64_t n = 0;
  for (int b = 0; b < 2; ++b)
    for (int i : blobs.blob_pixels[b]) {
      conf += pv[static_cast<int64_t>(i) * c + 1];
      ++n;
    }
  res.confidence = n > 0 ? conf / static_cast<double>(n) : 0.0;
  res.status = MeasureStatus::kOk;
  return res;
}

namespace {

void draw_line(std::vector<uint8_t>& rgb, int h, int w,
               const MeasurementLine& line, uint8_t r, uint8_t g, uint8_t b) {
  // Bresenham on the rounded endpoints.
  int y0 = static_cast<int>(std::lround(line.top_row));
  int x0 = static_cast<int>(std::lround(line.top_col));
  const int y1 = static_cast<int>(std::lround(line.bottom_row));
  const int x1 = static_cast<int>(std::lround(line.bottom_col));
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (y0 >= 0 && y0 < h && x0 >= 0 && x0 < w) {
      const int64_t i = (static_cast<int64_t>(y0) * w + x0) * 3;
      rgb[i] = r;
      rgb[i + 1] = g;
      rgb[i + 2] = b;
    }
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

void render_overlay(const std::string& path, const std::vector<double>& image,
                    int h, int w, const MeasurementLine& predicted,
                    const MeasurementLine* truth) {
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    const auto g = static_cast<uint8_t>(std::lround(v * 255.0));
    rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = g;
  }
  if (truth) draw_line(rgb, h, w, *truth, 255, 0, 0);
  draw_line(rgb, h, w, predicted, 0, 255, 0);
  write_png_rgb(path, rgb, h, w);
}

}  // namespace tra
