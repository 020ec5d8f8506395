#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "dfswe/config.hpp"
#include "dfswe/errors.hpp"

namespace dfswe {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A batch of feature maps. Rows are channels; columns enumerate
/// (sample, row, column) in row-major order, so for n == 1 the storage is
/// exactly the C x H x W row-major layout.
template <typename Scalar>
struct Tensor {
  int n = 1;
  int c = 0;
  int h = 0;
  int w = 0;
  RowMat<Scalar> data;

  static Tensor zeros(int n, int c, int h, int w) {
    Tensor t{n, c, h, w, RowMat<Scalar>::Zero(c, std::int64_t(n) * h * w)};
    return t;
  }

  std::int64_t pixels() const { return std::int64_t(h) * w; }
  std::int64_t columns() const { return pixels() * n; }
  std::int64_t sample_size() const { return pixels() * c; }
  BlockShape shape() const { return {c, h, w}; }

  /// Copy of one sample as an n == 1 tensor.
  Tensor sample(int b) const {
    Tensor t{1, c, h, w, data.middleCols(std::int64_t(b) * pixels(), pixels())};
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>{n, c, h, w, data.template cast<Other>()};
  }
};

/// Stack samples along the batch axis; all inputs must share C, H, W.
template <typename Scalar>
Tensor<Scalar> stack(std::span<const Tensor<Scalar>> samples) {
  if (samples.empty()) throw ShapeError("cannot stack an empty batch");
  const auto& first = samples.front();
  int total = 0;
  for (const auto& s : samples) {
    if (s.c != first.c || s.h != first.h || s.w != first.w)
      throw ShapeError("stack: inconsistent sample shapes");
    total += s.n;
  }
  auto out = Tensor<Scalar>::zeros(total, first.c, first.h, first.w);
  std::int64_t col = 0;
  for (const auto& s : samples) {
    out.data.middleCols(col, s.columns()) = s.data;
    col += s.columns();
  }
  return out;
}

/// The per-level latent blocks z_1..z_L of a single image.
template <typename Scalar>
struct LatentStack {
  std::vector<Tensor<Scalar>> blocks;

  std::int64_t size() const {
    std::int64_t s = 0;
    for (const auto& b : blocks) s += b.sample_size() * b.n;
    return s;
  }

  std::vector<BlockShape> shapes() const {
    std::vector<BlockShape> out;
    for (const auto& b : blocks) out.push_back(b.shape());
    return out;
  }

  template <typename Other>
  LatentStack<Other> cast() const {
    LatentStack<Other> out;
    for (const auto& b : blocks) out.blocks.push_back(b.template cast<Other>());
    return out;
  }
};

template <typename Scalar>
void check_shapes(const LatentStack<Scalar>& zs, const std::vector<BlockShape>& expected) {
  if (zs.blocks.size() != expected.size())
    throw ShapeError("latent stack has " + std::to_string(zs.blocks.size()) +
                     " blocks, expected " + std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& b = zs.blocks[i];
    if (b.shape() != expected[i] || b.n != 1 || b.data.rows() != b.c ||
        b.data.cols() != b.pixels())
      throw ShapeError("latent block " + std::to_string(i + 1) + " has the wrong shape");
  }
}

template <typename Scalar>
LatentStack<Scalar> zero_latents(const std::vector<BlockShape>& shapes) {
  LatentStack<Scalar> zs;
  for (const auto& s : shapes) zs.blocks.push_back(Tensor<Scalar>::zeros(1, s.c, s.h, s.w));
  return zs;
}

/// Flatten blocks z_1..z_L in order, each row-major over (channel, row, column).
template <typename Scalar>
VecX<Scalar> flatten(const LatentStack<Scalar>& zs) {
  VecX<Scalar> out(zs.size());
  std::int64_t pos = 0;
  for (const auto& b : zs.blocks) {
    const std::int64_t n = b.data.size();
    out.segment(pos, n) = Eigen::Map<const VecX<Scalar>>(b.data.data(), n);
    pos += n;
  }
  return out;
}

template <typename Scalar>
LatentStack<Scalar> unflatten(const VecX<Scalar>& flat, const std::vector<BlockShape>& shapes) {
  LatentStack<Scalar> zs = zero_latents<Scalar>(shapes);
  if (flat.size() != zs.size()) throw ShapeError("unflatten: element count mismatch");
  std::int64_t pos = 0;
  for (auto& b : zs.blocks) {
    const std::int64_t n = b.data.size();
    Eigen::Map<VecX<Scalar>>(b.data.data(), n) = flat.segment(pos, n);
    pos += n;
  }
  return zs;
}

}  // namespace dfswe
