#pragma once

#include <random>

#include "dfswe/glow.hpp"

namespace dfswe::testing {

/// Adds N(0, scale^2) noise to every trainable parameter, so that every
/// layer (including the zero-initialized coupling output) is non-trivial.
template <typename Scalar>
void perturb(Glow<Scalar>& model, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  model.mutable_params().visit([&](const std::string&, RowMat<Scalar>& m, bool trainable) {
    if (!trainable) return;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += Scalar(normal(rng));
  });
}

/// Perturbs only parameters whose name contains `layer`.
template <typename Scalar>
void perturb_layer(Glow<Scalar>& model, const std::string& layer, std::uint64_t seed,
                   double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  model.mutable_params().visit([&](const std::string& name, RowMat<Scalar>& m, bool trainable) {
    if (!trainable || name.find(layer) == std::string::npos) return;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += Scalar(normal(rng));
  });
}

template <typename Scalar>
Tensor<Scalar> random_images(int n, const GlowConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  auto t = Tensor<Scalar>::zeros(n, cfg.channels, cfg.height, cfg.width);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = Scalar(u(rng));
  return t;
}

}  // namespace dfswe::testing
