#include "dfswe/config.hpp"

#include <string>

#include "dfswe/errors.hpp"

namespace dfswe {

void GlowConfig::validate() const {
  if (channels < 1 || height < 1 || width < 1)
    throw ConfigError("image dimensions must be positive");
  if (levels < 1) throw ConfigError("levels must be >= 1");
  if (steps_per_level < 1) throw ConfigError("steps_per_level must be >= 1");
  if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
  if (n_bits < 1 || n_bits > 16) throw ConfigError("n_bits must be in [1, 16]");
  if (levels > 30) throw ConfigError("levels too large");
  const int factor = 1 << levels;
  if (height % factor != 0 || width % factor != 0)
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 2^levels = " + std::to_string(factor));
}

std::vector<BlockShape> latent_shapes(const GlowConfig& config) {
  config.validate();
  std::vector<BlockShape> shapes;
  int c = config.channels;
  int h = config.height;
  int w = config.width;
  for (int level = 1; level <= config.levels; ++level) {
    c *= 4;
    h /= 2;
    w /= 2;
    if (level < config.levels) {
      shapes.push_back({c / 2, h, w});
      c /= 2;
    } else {
      shapes.push_back({c, h, w});
    }
  }
  return shapes;
}

void to_json(nlohmann::json& j, const GlowConfig& c) {
  j = nlohmann::json{{"channels", c.channels},
                     {"height", c.height},
                     {"width", c.width},
                     {"levels", c.levels},
                     {"steps_per_level", c.steps_per_level},
                     {"hidden_width", c.hidden_width},
                     {"n_bits", c.n_bits}};
}

void from_json(const nlohmann::json& j, GlowConfig& c) {
  j.at("channels").get_to(c.channels);
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("levels").get_to(c.levels);
  j.at("steps_per_level").get_to(c.steps_per_level);
  j.at("hidden_width").get_to(c.hidden_width);
  c.n_bits = j.value("n_bits", 8);
}

}  // namespace dfswe
