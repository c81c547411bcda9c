#include "tra/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tra {

GrayImage read_png_gray(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw std::runtime_error("cannot read image: " + path);
  GrayImage out;
  out.h = img.rows;
  out.w = img.cols;
  out.px.resize(static_cast<size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.px[static_cast<size_t>(y) * out.w + x] =
          img.at<uint8_t>(y, x) / 255.0;
  return out;
}

void write_png_gray(const std::string& path, const std::vector<double>& px,
                    int h, int w) {
  cv::Mat img(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(px[static_cast<size_t>(y) * w + x], 0.0, 1.0);
      img.at<uint8_t>(y, x) = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  if (!cv::imwrite(path, img))
    throw std::runtime_error("cannot write image: " + path);
}

void write_png_rgb(const std::string& path, const std::vector<uint8_t>& rgb,
                   int h, int w) {
  cv::Mat img(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = (static_cast<size_t>(y) * w + x) * 3;
      img.at<cv::Vec3b>(y, x) = cv::Vec3b(rgb[i + 2], rgb[i + 1], rgb[i]);
    }
  if (!cv::imwrite(path, img))
    throw std::runtime_error("cannot write image: " + path);
}

}  // namespace tra
