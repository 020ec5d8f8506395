#include "dfswe/metrics.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dfswe/errors.hpp"

namespace dfswe {

namespace {

void check_pair(const QuantizedImage& x, const QuantizedImage& y) {
  if (!x.same_shape(y) || x.pixels.size() != y.pixels.size())
    throw ShapeError("metric inputs differ in shape: " + std::to_string(x.c) + "x" +
                     std::to_string(x.h) + "x" + std::to_string(x.w) + " vs " +
                     std::to_string(y.c) + "x" + std::to_string(y.h) + "x" + std::to_string(y.w));
  if (x.pixels.empty()) throw ShapeError("metric inputs are empty");
}

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

double mse(const QuantizedImage& x, const QuantizedImage& y) {
  check_pair(x, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i) {
    const double d = double(x.pixels[i]) - double(y.pixels[i]);
    acc += d * d;
  }
  return acc / double(x.pixels.size());
}

double rmse(const QuantizedImage& x, const QuantizedImage& y) { return std::sqrt(mse(x, y)); }

double psnr(const QuantizedImage& x, const QuantizedImage& y) {
  const double m = mse(x, y);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kPixelRange * kPixelRange / m);
}

double ssim(const QuantizedImage& x, const QuantizedImage& y) {
  check_pair(x, y);
  const double c1 = std::pow(0.01 * kPixelRange, 2);
  const double c2 = std::pow(0.03 * kPixelRange, 2);
  const std::size_t plane = std::size_t(x.h) * x.w;
  double total = 0.0;
  for (int c = 0; c < x.c; ++c) {
    const auto* px = x.pixels.data() + c * plane;
    const auto* py = y.pixels.data() + c * plane;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      mx += px[i];
      my += py[i];
    }
    mx /= double(plane);
    my /= double(plane);
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double dx = px[i] - mx, dy = py[i] - my;
      vx += dx * dx;
      vy += dy * dy;
      cov += dx * dy;
    }
    vx /= double(plane);
    vy /= double(plane);
    cov /= double(plane);
    total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / double(x.c);
}

double bit_accuracy(const QuantizedImage& x, const QuantizedImage& y) {
  check_pair(x, y);
  if (x.bit_depth != 8 || y.bit_depth != 8) throw ShapeError("bit_accuracy expects 8-bit images");
  std::uint64_t equal = 0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i)
    equal += 8 - std::popcount(unsigned((x.pixels[i] ^ y.pixels[i]) & 0xffu));
  return double(equal) / (8.0 * double(x.pixels.size()));
}

double bpp(const std::vector<PayloadShape>& secrets, int stego_h, int stego_w) {
  if (stego_h <= 0 || stego_w <= 0) throw ShapeError("bpp: stego image has zero area");
  double bits = 0.0;
  for (const auto& s : secrets) bits += double(s.bit_depth) * s.c * s.h * s.w;
  return bits / (double(stego_h) * stego_w);
}

double detection_error(double p_fa, double p_md) {
  if (!(p_fa >= 0.0 && p_fa <= 1.0) || !(p_md >= 0.0 && p_md <= 1.0))
    throw ConfigError("detection probabilities must lie in [0, 1]");
  return 0.5 * (p_fa + p_md);
}

MetricReport compare(const std::string& name, const QuantizedImage& original,
                     const QuantizedImage& extracted) {
  return {name, psnr(original, extracted), ssim(original, extracted), rmse(original, extracted),
          bit_accuracy(original, extracted)};
}

MetricSummary summarize(std::vector<MetricReport> rows) {
  MetricSummary s;
  s.rows = std::move(rows);
  if (s.rows.empty()) return s;
  double psnr_sum = 0.0;
  int finite = 0;
  for (const auto& r : s.rows) {
    if (std::isfinite(r.psnr)) {
      psnr_sum += r.psnr;
      ++finite;
    }
    s.mean_ssim += r.ssim;
    s.mean_rmse += r.rmse;
    s.mean_bit_accuracy += r.bit_accuracy;
  }
  const double n = double(s.rows.size());
  s.mean_psnr = finite ? psnr_sum / finite : std::numeric_limits<double>::infinity();
  s.mean_ssim /= n;
  s.mean_rmse /= n;
  s.mean_bit_accuracy /= n;
  return s;
}

std::string metrics_csv(const std::vector<MetricReport>& rows) {
  std::ostringstream os;
  os << "name,psnr,ssim,rmse,bit_accuracy\n";
  for (const auto& r : rows)
    os << r.name << ',' << num(r.psnr) << ',' << num(r.ssim) << ',' << num(r.rmse) << ','
       << num(r.bit_accuracy) << '\n';
  return os.str();
}

std::string summary_json(const MetricSummary& s) {
  auto val = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  const nlohmann::json j{{"pairs", s.rows.size()},
                         {"mean_psnr", val(s.mean_psnr)},
                         {"mean_ssim", val(s.mean_ssim)},
                         {"mean_rmse", val(s.mean_rmse)},
                         {"mean_bit_accuracy", val(s.mean_bit_accuracy)},
                         {"bpp", val(s.bpp)},
                         {"pe", val(s.pe)}};
  return j.dump(2) + "\n";
}

}  // namespace dfswe
