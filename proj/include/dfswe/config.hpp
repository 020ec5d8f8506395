#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

namespace dfswe {

/// Architecture of a multi-scale flow. Every level squeezes (x4 channels,
/// /2 per spatial side), runs `steps_per_level` flow steps, and all but the
/// last level emit half of their channels as a latent block.
struct GlowConfig {
  int channels = 3;
  int height = 32;
  int width = 32;
  int levels = 3;
  int steps_per_level = 8;
  int hidden_width = 256;
  int n_bits = 8;

  std::int64_t dims() const {
    return std::int64_t(channels) * height * width;
  }

  /// Throws ConfigError when the config cannot describe a valid flow.
  void validate() const;

  bool operator==(const GlowConfig&) const = default;
};

struct BlockShape {
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t size() const { return std::int64_t(c) * h * w; }
  bool operator==(const BlockShape&) const = default;
};

/// Shapes of the latent blocks z_1..z_L in emission order.
std::vector<BlockShape> latent_shapes(const GlowConfig& config);

void to_json(nlohmann::json& j, const GlowConfig& c);
void from_json(const nlohmann::json& j, GlowConfig& c);

}  // namespace dfswe
