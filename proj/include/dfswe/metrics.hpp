#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "dfswe/config.hpp"
#include "dfswe/image.hpp"

namespace dfswe {

// Quality and capacity metrics over 8-bit images. All metrics average over
// every channel and pixel.

inline constexpr double kPixelRange = 255.0;

double mse(const QuantizedImage& x, const QuantizedImage& y);
double rmse(const QuantizedImage& x, const QuantizedImage& y);

/// 10 log10(255^2 / MSE); +infinity for identical images.
double psnr(const QuantizedImage& x, const QuantizedImage& y);

/// Global-statistics SSIM per channel (no sliding window), averaged over
/// channels. C1 = (0.01 * 255)^2, C2 = (0.03 * 255)^2.
double ssim(const QuantizedImage& x, const QuantizedImage& y);

/// Fraction of equal bits over the 8-bit binary expansion of every pixel.
double bit_accuracy(const QuantizedImage& x, const QuantizedImage& y);

struct PayloadShape {
  int c = 3;
  int h = 0;
  int w = 0;
  int bit_depth = 8;
};

/// Payload bits per stego pixel: sum_j depth_j * C_j * H_j * W_j / (H * W).
double bpp(const std::vector<PayloadShape>& secrets, int stego_h, int stego_w);

/// Pe = (P_FA + P_MD) / 2.
double detection_error(double p_fa, double p_md);

struct MetricReport {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
  double bit_accuracy = 0.0;
};

MetricReport compare(const std::string& name, const QuantizedImage& original,
                     const QuantizedImage& extracted);

struct MetricSummary {
  std::vector<MetricReport> rows;
  double mean_psnr = 0.0;  // over finite values; +inf if every pair is identical
  double mean_ssim = 0.0;
  double mean_rmse = 0.0;
  double mean_bit_accuracy = 0.0;
  double bpp = 0.0;
  double pe = std::numeric_limits<double>::quiet_NaN();
};

MetricSummary summarize(std::vector<MetricReport> rows);

/// CSV with header name,psnr,ssim,rmse,bit_accuracy (one row per pair).
std::string metrics_csv(const std::vector<MetricReport>& rows);
std::string summary_json(const MetricSummary& s);

}  // namespace dfswe
