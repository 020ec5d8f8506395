#include "dfswe/circulation.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

namespace dfswe {

std::string Tactics::label() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(pks, "pks");
  add(hdsr, "hdsr");
  add(dct, "dct");
  return s.empty() ? "direct" : s;
}

std::string to_string(ReceiptMode mode) {
  return mode == ReceiptMode::keyless ? "keyless" : "receipt";
}

ReceiptMode receipt_mode_from_string(const std::string& s) {
  if (s == "keyless") return ReceiptMode::keyless;
  if (s == "receipt") return ReceiptMode::receipt;
  throw FormatError("unknown receipt mode '" + s + "'");
}

namespace {

std::string sha256_hex(const std::string& text) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("E_RUNTIME", "SHA-256 computation failed");
  std::string hex;
  hex.reserve(len * 2);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

nlohmann::json shape_json(const GlowConfig& c) {
  return {{"channels", c.channels}, {"height", c.height}, {"width", c.width}, {"levels", c.levels}};
}

}  // namespace

std::string plan_fingerprint(const GlowConfig& secret_cfg, const GlowConfig& stego_cfg, int k,
                             bool hdsr) {
  const nlohmann::json j{{"version", 1},
                         {"k", k},
                         {"hdsr", hdsr},
                         {"secret", shape_json(secret_cfg)},
                         {"stego", shape_json(stego_cfg)}};
  return sha256_hex(j.dump());
}

CirculationPlan plan_allocation(const GlowConfig& secret_cfg, const GlowConfig& stego_cfg, int k,
                                bool hdsr) {
  if (k < 1) throw ConfigError("number of secrets must be >= 1");
  CirculationPlan plan;
  plan.k = k;
  plan.hdsr = hdsr;
  plan.secret_shapes = latent_shapes(secret_cfg);
  plan.stego_shapes = latent_shapes(stego_cfg);

  const int region_blocks =
      hdsr ? std::max<int>(int(plan.stego_shapes.size()) - 1, 0) : int(plan.stego_shapes.size());
  std::vector<std::int64_t> block_start;
  for (int i = 0; i < region_blocks; ++i) {
    block_start.push_back(plan.region_len);
    plan.region_len += plan.stego_shapes[i].size();
  }
  plan.budget = std::min<std::int64_t>(plan.region_len / k, secret_cfg.dims());
  if (plan.budget == 0)
    throw ConfigError("no latent capacity: replace region of " + std::to_string(plan.region_len) +
                      " elements cannot hold " + std::to_string(k) + " secrets");

  for (int j = 0; j < k; ++j) {
    std::int64_t pos = std::int64_t(j) * plan.budget;
    const std::int64_t end = pos + plan.budget;
    while (pos < end) {
      const auto it = std::upper_bound(block_start.begin(), block_start.end(), pos);
      const int block = int(it - block_start.begin()) - 1;
      const std::int64_t block_end = block_start[block] + plan.stego_shapes[block].size();
      const std::int64_t len = std::min(end, block_end) - pos;
      plan.segments.push_back(
          {j, block, pos - block_start[block], len, pos - std::int64_t(j) * plan.budget});
      pos += len;
    }
  }
  plan.fingerprint = plan_fingerprint(secret_cfg, stego_cfg, k, hdsr);
  return plan;
}

}  // namespace dfswe
