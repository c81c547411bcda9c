#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tra {

// 8-bit grayscale PNG IO. Pixel values map to [0, 1] doubles as v / 255.
struct GrayImage {
  int h = 0, w = 0;
  std::vector<double> px;  // row-major, [0, 1]
};

GrayImage read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const std::vector<double>& px,
                    int h, int w);
void write_png_rgb(const std::string& path, const std::vector<uint8_t>& rgb,
                   int h, int w);

}  // namespace tra
