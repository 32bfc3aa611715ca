#include "carfield/metrics.hpp"

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "carfield/log.hpp"

namespace carfield {

namespace {

void check_same_shape(const Image& a, const Image& b, const char* who) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw InvalidArgument(strf("%s: shape mismatch (%dx%dx%d vs %dx%dx%d)", who, a.width, a.height,
                               a.channels, b.width, b.height, b.channels));
  }
}

void check_mask(const Image& img, const Image& mask, const char* who) {
  if (mask.channels != 1 || mask.width != img.width || mask.height != img.height) {
    throw InvalidArgument(strf("%s: mask must be single-channel and match the image", who));
  }
}

PsnrResult psnr_from_mse(double mse) {
  PsnrResult r;
  if (mse <= 0.0) {
    r.infinite = true;
    return r;
  }
  r.db = 10.0 * std::log10(1.0 / mse);
  return r;
}

// Reflect-101 index (edge pixel not duplicated).
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// Separable Gaussian blur of a single-channel plane.
std::vector<double> gaussian_blur(const std::vector<double>& src, int w, int h,
                                  const std::vector<double>& kernel) {
  const int radius = static_cast<int>(kernel.size()) / 2;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * src[static_cast<size_t>(y) * w + reflect(x + k, w)];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * tmp[static_cast<size_t>(reflect(y + k, h)) * w + x];
      }
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const int radius = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - radius;
    k[i] = std::exp(-0.5 * x * x / (sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Per-pixel SSIM map for one channel pair.
std::vector<double> ssim_map_channel(const std::vector<double>& a, const std::vector<double>& b,
                                     int w, int h) {
  static const std::vector<double> kernel = gaussian_kernel(11, 1.5);
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;

  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  std::vector<double> mu_a = gaussian_blur(a, w, h, kernel);
  std::vector<double> mu_b = gaussian_blur(b, w, h, kernel);
  std::vector<double> m_aa = gaussian_blur(aa, w, h, kernel);
  std::vector<double> m_bb = gaussian_blur(bb, w, h, kernel);
  std::vector<double> m_ab = gaussian_blur(ab, w, h, kernel);

  std::vector<double> map(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    map[i] = ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return map;
}

double ssim_impl(const Image& a, const Image& b, const Image* mask) {
  check_same_shape(a, b, "ssim");
  if (mask) check_mask(a, *mask, "ssim");
  double total = 0.0;
  long count = 0;
  std::vector<double> pa(a.pixel_count()), pb(a.pixel_count());
  for (int c = 0; c < a.channels; ++c) {
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        pa[static_cast<size_t>(y) * a.width + x] = a.at(x, y, c);
        pb[static_cast<size_t>(y) * a.width + x] = b.at(x, y, c);
      }
    std::vector<double> map = ssim_map_channel(pa, pb, a.width, a.height);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        if (mask && mask->at(x, y, 0) < 0.5f) continue;
        total += map[static_cast<size_t>(y) * a.width + x];
        ++count;
      }
  }
  if (count == 0) throw InvalidArgument("ssim: empty foreground mask");
  return total / static_cast<double>(count);
}

}  // namespace

PsnrResult psnr(const Image& a, const Image& b) {
  check_same_shape(a, b, "psnr");
  double se = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  return psnr_from_mse(se / static_cast<double>(a.data.size()));
}

PsnrResult psnr_masked(const Image& a, const Image& b, const Image& mask) {
  check_same_shape(a, b, "psnr");
  check_mask(a, mask, "psnr");
  double se = 0.0;
  long count = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask.at(x, y, 0) < 0.5f) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
        se += d * d;
      }
      ++count;
    }
  if (count == 0) throw InvalidArgument("psnr: empty foreground mask");
  return psnr_from_mse(se / static_cast<double>(count * a.channels));
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

double ssim_masked(const Image& a, const Image& b, const Image& mask) {
  return ssim_impl(a, b, &mask);
}

MetricReport evaluate_pair(const Image& rendered, const Image& reference, const Image* mask) {
  MetricReport r;
  if (mask) {
    PsnrResult p = psnr_masked(rendered, reference, *mask);
    r.psnr = p.db;
    r.psnr_infinite = p.infinite;
    r.ssim = ssim_masked(rendered, reference, *mask);
    r.mask_mode = "foreground";
    long count = 0;
    for (float v : mask->data) count += v >= 0.5f ? 1 : 0;
    r.pixel_count = static_cast<int>(count);
  } else {
    PsnrResult p = psnr(rendered, reference);
    r.psnr = p.db;
    r.psnr_infinite = p.infinite;
    r.ssim = ssim(rendered, reference);
    r.mask_mode = "full";
    r.pixel_count = static_cast<int>(rendered.pixel_count());
  }
  return r;
}

std::string metric_report_json(const MetricReport& r) {
  nlohmann::json j;
  if (r.psnr_infinite) {
    j["psnr"] = "inf";
  } else {
    j["psnr"] = r.psnr;
  }
  j["ssim"] = r.ssim;
  j["lpips"] = nullptr;
  j["pixel_count"] = r.pixel_count;
  j["mask_mode"] = r.mask_mode;
  return j.dump();
}

}  // namespace carfield
