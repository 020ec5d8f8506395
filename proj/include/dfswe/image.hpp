#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dfswe/errors.hpp"
#include "dfswe/tensor.hpp"

namespace dfswe {

/// Integer pixels, C x H x W row-major, values in [0, 2^bit_depth).
struct QuantizedImage {
  int c = 0;
  int h = 0;
  int w = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> pixels;

  QuantizedImage() = default;
  QuantizedImage(int c_, int h_, int w_, int depth = 8)
      : c(c_), h(h_), w(w_), bit_depth(depth), pixels(std::size_t(c_) * h_ * w_, 0) {}

  std::uint16_t& at(int ch, int y, int x) { return pixels[(std::size_t(ch) * h + y) * w + x]; }
  std::uint16_t at(int ch, int y, int x) const { return pixels[(std::size_t(ch) * h + y) * w + x]; }
  std::uint32_t max_value() const { return (1u << bit_depth) - 1u; }
  bool same_shape(const QuantizedImage& o) const { return c == o.c && h == o.h && w == o.w; }
  bool operator==(const QuantizedImage&) const = default;
};

enum class Domain { model_space, unit_space };

/// Real-valued image. Model space is [-0.5, 0.5), unit space [0, 1].
template <typename Scalar>
struct ImageTensor {
  Tensor<Scalar> pixels;
  Domain domain = Domain::model_space;
};

template <typename Scalar>
ImageTensor<Scalar> to_unit_space(ImageTensor<Scalar> x) {
  if (x.domain == Domain::model_space) {
    x.pixels.data.array() += Scalar(0.5);
    x.domain = Domain::unit_space;
  }
  return x;
}

template <typename Scalar>
ImageTensor<Scalar> to_model_space(ImageTensor<Scalar> x) {
  if (x.domain == Domain::unit_space) {
    x.pixels.data.array() -= Scalar(0.5);
    x.domain = Domain::model_space;
  }
  return x;
}

/// Map integer pixels into model space. Without an rng the half-quantum
/// offset is used, (p + 0.5) / 2^d - 0.5; with one, (p + u) / 2^d - 0.5
/// where u ~ U[0, 1).
template <typename Scalar = float>
ImageTensor<Scalar> dequantize(const QuantizedImage& img, std::mt19937_64* rng = nullptr) {
  const double levels = double(1u << img.bit_depth);
  ImageTensor<Scalar> out{Tensor<Scalar>::zeros(1, img.c, img.h, img.w), Domain::model_space};
  Scalar* dst = out.pixels.data.data();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::uint32_t p = img.pixels[i];
    if (p > img.max_value()) throw ShapeError("pixel value out of range for bit depth");
    const double u = rng ? unif(*rng) : 0.5;
    dst[i] = Scalar((p + u) / levels - 0.5);
  }
  return out;
}

/// Clamp a model-space image to [-0.5, 0.5 - 2^-d] and quantize with
/// p = clamp(floor((y + 0.5) * 2^d), 0, 2^d - 1).
template <typename Scalar>
QuantizedImage quantize(const ImageTensor<Scalar>& x, int bit_depth) {
  if (bit_depth < 1 || bit_depth > 16) throw ConfigError("bit depth must be in [1, 16]");
  const auto model = to_model_space(x);
  const auto& t = model.pixels;
  QuantizedImage out(t.c, t.h, t.w, bit_depth);
  const double levels = double(1u << bit_depth);
  const double hi = 0.5 - 1.0 / levels;
  const double maxp = levels - 1.0;
  const Scalar* src = t.data.data();
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    double y = double(src[i]);
    if (!std::isfinite(y)) y = 0.0;
    y = std::clamp(y, -0.5, hi);
    const double p = std::clamp(std::floor((y + 0.5) * levels), 0.0, maxp);
    out.pixels[i] = std::uint16_t(p);
  }
  return out;
}

}  // namespace dfswe
