#include "carfield/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "carfield/log.hpp"

namespace carfield {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::vector<uint8_t> decode_png_8bit(const std::string& path, int& w, int& h, int& ch) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError(strf("cannot open PNG for reading: %s", path.c_str()));

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw DataError(strf("not a PNG file: %s", path.c_str()));
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng allocation failure");
  }

  std::vector<uint8_t> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(strf("PNG decode error: %s", path.c_str()));
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  ch = static_cast<int>(png_get_channels(png, info));
  if (ch != 1 && ch != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(strf("unsupported PNG channel count %d: %s", ch, path.c_str()));
  }

  pixels.resize(static_cast<size_t>(w) * h * ch);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * w * ch;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

}  // namespace

Image read_png(const std::string& path) {
  int w = 0, h = 0, ch = 0;
  std::vector<uint8_t> bytes = decode_png_8bit(path, w, h, ch);
  Image img = Image::zeros(w, h, ch);
  for (size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0f;
  return img;
}

Image read_mask_png(const std::string& path) {
  int w = 0, h = 0, ch = 0;
  std::vector<uint8_t> bytes = decode_png_8bit(path, w, h, ch);
  if (ch != 1) throw DataError(strf("mask must be single channel, got %d channels: %s", ch, path.c_str()));
  Image img = Image::zeros(w, h, 1);
  for (size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != 0 && bytes[i] != 255) {
      throw DataError(strf("mask value %d at index %zu is not in {0, 255}: %s",
                           static_cast<int>(bytes[i]), i, path.c_str()));
    }
    img.data[i] = bytes[i] == 255 ? 1.0f : 0.0f;
  }
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.empty() || (img.channels != 1 && img.channels != 3)) {
    throw InvalidArgument("write_png: image must be non-empty with 1 or 3 channels");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError(strf("cannot open PNG for writing: %s", path.c_str()));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(strf("PNG encode error: %s", path.c_str()));
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        float v = std::clamp(img.at(x, y, c), 0.0f, 1.0f);
        row[static_cast<size_t>(x) * img.channels + c] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
  if (img.empty()) throw InvalidArgument("resize_bilinear: empty image");
  if (out_w <= 0 || out_h <= 0) throw InvalidArgument("resize_bilinear: bad output size");
  Image out = Image::zeros(out_w, out_h, img.channels);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    // Pixel-center mapping keeps content aligned for up- and downscaling.
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, img.height - 1);
    int y1c = std::clamp(y0 + 1, 0, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, img.width - 1);
      int x1c = std::clamp(x0 + 1, 0, img.width - 1);
      for (int c = 0; c < img.channels; ++c) {
        double v00 = img.at(x0c, y0c, c), v10 = img.at(x1c, y0c, c);
        double v01 = img.at(x0c, y1c, c), v11 = img.at(x1c, y1c, c);
        double v = (1 - wy) * ((1 - wx) * v00 + wx * v10) + wy * ((1 - wx) * v01 + wx * v11);
        out.at(x, y, c) = static_cast<float>(v);
      }
    }
  }
  return out;
}

LetterboxResult letterbox(const Image& img, int size, float fill) {
  if (img.empty()) throw InvalidArgument("letterbox: empty image");
  if (size <= 0) throw InvalidArgument("letterbox: bad size");
  LetterboxResult r;
  r.scale = std::min(static_cast<double>(size) / img.width, static_cast<double>(size) / img.height);
  int sw = std::max(1, static_cast<int>(std::lround(img.width * r.scale)));
  int sh = std::max(1, static_cast<int>(std::lround(img.height * r.scale)));
  Image scaled = resize_bilinear(img, sw, sh);
  r.pad_x = (size - sw) / 2;
  r.pad_y = (size - sh) / 2;
  r.image = Image::zeros(size, size, img.channels);
  if (fill != 0.0f) std::fill(r.image.data.begin(), r.image.data.end(), fill);
  for (int y = 0; y < sh; ++y)
    for (int x = 0; x < sw; ++x)
      for (int c = 0; c < img.channels; ++c)
        r.image.at(x + r.pad_x, y + r.pad_y, c) = scaled.at(x, y, c);
  return r;
}

void threshold_mask(Image& mask, float level) {
  for (float& v : mask.data) v = v >= level ? 1.0f : 0.0f;
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, const float* rgb) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    double t = steps == 0 ? 0.0 : static_cast<double>(i) / steps;
    int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
    for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = rgb[std::min(c, 2)];
  }
}

Image turbo_map(const std::vector<float>& values, int width, int height) {
  if (values.size() != static_cast<size_t>(width) * height) {
    throw InvalidArgument("turbo_map: value count does not match dimensions");
  }
  // Polynomial fit of the turbo colormap.
  auto poly = [](double t, const double* k) {
    return k[0] + t * (k[1] + t * (k[2] + t * (k[3] + t * (k[4] + t * k[5]))));
  };
  static const double kr[6] = {0.13572138, 4.61539260, -42.66032258, 132.13108234,
                               -152.94239396, 59.28637943};
  static const double kg[6] = {0.09140261, 2.19418839, 4.84296658, -14.18503333,
                               4.27729857, 2.82956604};
  static const double kb[6] = {0.10667330, 12.64194608, -60.58204836, 110.36276771,
                               -89.90310912, 27.34824973};
  Image out = Image::zeros(width, height, 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double t = std::clamp<double>(values[static_cast<size_t>(y) * width + x], 0.0, 1.0);
      out.at(x, y, 0) = static_cast<float>(std::clamp(poly(t, kr), 0.0, 1.0));
      out.at(x, y, 1) = static_cast<float>(std::clamp(poly(t, kg), 0.0, 1.0));
      out.at(x, y, 2) = static_cast<float>(std::clamp(poly(t, kb), 0.0, 1.0));
    }
  }
  return out;
}

void write_npy(const std::string& path, const std::vector<float>& values, int rows, int cols) {
  if (values.size() != static_cast<size_t>(rows) * cols) {
    throw InvalidArgument("write_npy: value count does not match shape");
  }
  std::string dict = strf("{'descr': '<f4', 'fortran_order': False, 'shape': (%d, %d), }", rows, cols);
  // Pad with spaces so header length (magic + 2-byte len + dict + '\n') is a
  // multiple of 64.
  size_t unpadded = 6 + 2 + 2 + dict.size() + 1;
  size_t pad = (64 - unpadded % 64) % 64;
  dict.append(pad, ' ');
  dict.push_back('\n');

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(strf("cannot open for writing: %s", path.c_str()));
  const uint8_t magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  f.write(reinterpret_cast<const char*>(magic), 8);
  uint16_t len = static_cast<uint16_t>(dict.size());
  f.write(reinterpret_cast<const char*>(&len), 2);
  f.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  f.write(reinterpret_cast<const char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!f) throw DataError(strf("write failed: %s", path.c_str()));
}

}  // namespace carfield
