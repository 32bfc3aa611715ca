#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "carfield/errors.hpp"

namespace carfield {

// Row-major HWC float image, values in [0, 1]. channels is 1 or 3.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  static Image zeros(int w, int h, int c) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.data.assign(static_cast<size_t>(w) * h * c, 0.0f);
    return img;
  }

  float& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  bool empty() const { return data.empty(); }
};

// 8-bit PNG -> float image. Palette/16-bit/low-depth inputs are expanded to
// 8 bits; alpha is dropped; gray stays single channel, color becomes RGB.
Image read_png(const std::string& path);

// Strict mask load: single channel, every sample exactly 0 or 255.
// Values become {0, 1}.
Image read_mask_png(const std::string& path);

// Clamp to [0, 1], round to 8-bit, write gray or RGB PNG.
void write_png(const std::string& path, const Image& img);

Image resize_bilinear(const Image& img, int out_w, int out_h);

// Aspect-preserving resize into a size x size square, zero fill elsewhere.
struct LetterboxResult {
  Image image;
  double scale = 1.0;  // src * scale == scaled content size
  int pad_x = 0;
  int pad_y = 0;
};
LetterboxResult letterbox(const Image& img, int size, float fill = 0.0f);

// Re-threshold a resized mask back to {0, 1}.
void threshold_mask(Image& mask, float level = 0.5f);

void draw_line(Image& img, double x0, double y0, double x1, double y1, const float* rgb);

// Map values in [0, 1] through the turbo colormap to an RGB image.
Image turbo_map(const std::vector<float>& values, int width, int height);

// Minimal .npy writer: 2D float32 array, C order, little endian.
void write_npy(const std::string& path, const std::vector<float>& values, int rows, int cols);

}  // namespace carfield
