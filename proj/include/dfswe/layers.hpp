#pragma once

// Building blocks of a flow step that operate on channel-by-column feature
// maps (see Tensor): squeeze, 3x3 im2col, and the parameter containers.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dfswe/tensor.hpp"

namespace dfswe {

/// Per-channel affine normalization: y = (x + bias) * exp(log_scale).
template <typename Scalar>
struct ActNormParams {
  RowMat<Scalar> bias;       // C x 1
  RowMat<Scalar> log_scale;  // C x 1
};

/// Invertible 1x1 channel mixing, W = perm * L * (U + diag(sign * exp(log_diag)))
/// with L unit lower triangular and U strictly upper triangular.
template <typename Scalar>
struct MixParams {
  RowMat<Scalar> perm;       // C x C, fixed
  RowMat<Scalar> lower;      // C x C, strictly lower part used
  RowMat<Scalar> upper;      // C x C, strictly upper part used
  RowMat<Scalar> log_diag;   // C x 1
  RowMat<Scalar> sign_diag;  // C x 1, fixed
};

/// Affine coupling network: conv3x3 -> ReLU -> conv1x1 -> ReLU -> conv3x3.
/// The last layer emits [shift; raw_scale] for the passive half.
template <typename Scalar>
struct CouplingParams {
  RowMat<Scalar> w1, b1;  // hidden x (Ca*9), hidden x 1
  RowMat<Scalar> w2, b2;  // hidden x hidden, hidden x 1
  RowMat<Scalar> w3, b3;  // (2*Cb) x (hidden*9), (2*Cb) x 1
};

template <typename Scalar>
struct StepParams {
  ActNormParams<Scalar> actnorm;
  MixParams<Scalar> mix;
  CouplingParams<Scalar> coupling;
};

/// All parameters of a flow, addressable by stable names such as
/// "level1.step3.coupling.w2".
template <typename Scalar>
struct GlowParams {
  std::vector<std::vector<StepParams<Scalar>>> levels;

  /// Calls f(name, matrix, trainable) for every parameter in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  GlowParams zeros_like() const {
    GlowParams out = *this;
    out.visit([](const std::string&, RowMat<Scalar>& m, bool) { m.setZero(); });
    return out;
  }

  template <typename Other>
  GlowParams<Other> cast() const {
    GlowParams<Other> out;
    out.levels.resize(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) out.levels[i].resize(levels[i].size());
    std::vector<const RowMat<Scalar>*> src;
    visit([&](const std::string&, const RowMat<Scalar>& m, bool) { src.push_back(&m); });
    std::size_t idx = 0;
    out.visit([&](const std::string&, RowMat<Other>& m, bool) {
      m = src[idx++]->template cast<Other>();
    });
    return out;
  }

private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (std::size_t li = 0; li < self.levels.size(); ++li) {
      for (std::size_t si = 0; si < self.levels[li].size(); ++si) {
        auto& s = self.levels[li][si];
        const std::string p =
            "level" + std::to_string(li + 1) + ".step" + std::to_string(si + 1) + ".";
        f(p + "actnorm.bias", s.actnorm.bias, true);
        f(p + "actnorm.log_scale", s.actnorm.log_scale, true);
        f(p + "mix.perm", s.mix.perm, false);
        f(p + "mix.lower", s.mix.lower, true);
        f(p + "mix.upper", s.mix.upper, true);
        f(p + "mix.log_diag", s.mix.log_diag, true);
        f(p + "mix.sign_diag", s.mix.sign_diag, false);
        f(p + "coupling.w1", s.coupling.w1, true);
        f(p + "coupling.b1", s.coupling.b1, true);
        f(p + "coupling.w2", s.coupling.w2, true);
        f(p + "coupling.b2", s.coupling.b2, true);
        f(p + "coupling.w3", s.coupling.w3, true);
        f(p + "coupling.b3", s.coupling.b3, true);
      }
    }
  }
};

namespace detail {

/// (C, N, H, W) -> (4C, N, H/2, W/2); output channel = c*4 + dy*2 + dx.
template <typename Scalar>
Tensor<Scalar> squeeze(const Tensor<Scalar>& in) {
  const int h2 = in.h / 2, w2 = in.w / 2;
  auto out = Tensor<Scalar>::zeros(in.n, in.c * 4, h2, w2);
  for (int c = 0; c < in.c; ++c) {
    const Scalar* src = in.data.row(c).data();
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        Scalar* dst = out.data.row(c * 4 + dy * 2 + dx).data();
        for (int b = 0; b < in.n; ++b)
          for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x)
              dst[(std::int64_t(b) * h2 + y) * w2 + x] =
                  src[(std::int64_t(b) * in.h + 2 * y + dy) * in.w + 2 * x + dx];
      }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> unsqueeze(const Tensor<Scalar>& in) {
  const int c = in.c / 4, h = in.h * 2, w = in.w * 2;
  auto out = Tensor<Scalar>::zeros(in.n, c, h, w);
  for (int ch = 0; ch < c; ++ch) {
    Scalar* dst = out.data.row(ch).data();
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const Scalar* src = in.data.row(ch * 4 + dy * 2 + dx).data();
        for (int b = 0; b < in.n; ++b)
          for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x)
              dst[(std::int64_t(b) * h + 2 * y + dy) * w + 2 * x + dx] =
                  src[(std::int64_t(b) * in.h + y) * in.w + x];
      }
  }
  return out;
}

/// Zero-padded 3x3 patches: row ci*9 + ky*3 + kx holds the input shifted
/// by (ky-1, kx-1).
template <typename Derived, typename Scalar = typename Derived::Scalar>
void im2col3x3(const Eigen::MatrixBase<Derived>& in, int n, int h, int w, RowMat<Scalar>& cols) {
  const std::int64_t cin = in.rows();
  const std::int64_t P = std::int64_t(n) * h * w;
  cols.resize(cin * 9, P);
  for (std::int64_t c = 0; c < cin; ++c) {
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const int oy = ky - 1, ox = kx - 1;
        for (int b = 0; b < n; ++b)
          for (int y = 0; y < h; ++y) {
            const int sy = y + oy;
            Scalar* drow = dst + (std::int64_t(b) * h + y) * w;
            if (sy < 0 || sy >= h) {
              std::fill(drow, drow + w, Scalar(0));
              continue;
            }
            const std::int64_t base = (std::int64_t(b) * h + sy) * w;
            for (int x = 0; x < w; ++x) {
              const int sx = x + ox;
              drow[x] = (sx < 0 || sx >= w) ? Scalar(0) : in(c, base + sx);
            }
          }
      }
  }
}

/// Adjoint of im2col3x3.
template <typename Scalar>
RowMat<Scalar> col2im3x3(const RowMat<Scalar>& cols, int n, int h, int w) {
  const std::int64_t cin = cols.rows() / 9;
  RowMat<Scalar> out = RowMat<Scalar>::Zero(cin, std::int64_t(n) * h * w);
  for (std::int64_t c = 0; c < cin; ++c) {
    Scalar* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src = cols.row(c * 9 + ky * 3 + kx).data();
        const int oy = ky - 1, ox = kx - 1;
        for (int b = 0; b < n; ++b)
          for (int y = 0; y < h; ++y) {
            const int sy = y + oy;
            if (sy < 0 || sy >= h) continue;
            const Scalar* srow = src + (std::int64_t(b) * h + y) * w;
            Scalar* drow = dst + (std::int64_t(b) * h + sy) * w;
            for (int x = 0; x < w; ++x) {
              const int sx = x + ox;
              if (sx >= 0 && sx < w) drow[sx] += srow[x];
            }
          }
      }
  }
  return out;
}

/// Sum each sample's columns: (rows x N*P) -> N values.
template <typename Derived>
Eigen::VectorXd per_sample_sum(const Eigen::MatrixBase<Derived>& m, int n) {
  const std::int64_t P = m.cols() / n;
  Eigen::VectorXd out(n);
  for (int b = 0; b < n; ++b) out(b) = m.middleCols(std::int64_t(b) * P, P).template cast<double>().sum();
  return out;
}

}  // namespace detail
}  // namespace dfswe
