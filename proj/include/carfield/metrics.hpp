#pragma once

#include <optional>
#include <string>

#include "carfield/image.hpp"

namespace carfield {

struct MetricReport {
  double psnr = 0.0;  // meaningful only when !psnr_infinite
  bool psnr_infinite = false;
  double ssim = 0.0;
  int pixel_count = 0;
  std::string mask_mode;  // "full" | "foreground"
};

// 10*log10(1/MSE) over all samples of [0,1] images. MSE == 0 is flagged.
struct PsnrResult {
  double db = 0.0;
  bool infinite = false;
};
PsnrResult psnr(const Image& a, const Image& b);

// Foreground variant: MSE restricted to mask == 1 pixels (all channels).
PsnrResult psnr_masked(const Image& a, const Image& b, const Image& mask);

// Mean SSIM (11x11 Gaussian window, sigma 1.5, k1 0.01, k2 0.03, L = 1),
// boundaries via reflection padding, averaged over channels.
double ssim(const Image& a, const Image& b);
double ssim_masked(const Image& a, const Image& b, const Image& mask);

// Full or foreground report for one image pair.
MetricReport evaluate_pair(const Image& rendered, const Image& reference,
                           const Image* mask /* nullable */);

// Serialized report; infinite PSNR becomes the string "inf", the reserved
// lpips field is null.
std::string metric_report_json(const MetricReport& r);

}  // namespace carfield
