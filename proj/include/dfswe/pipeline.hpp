#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfswe/circulation.hpp"
#include "dfswe/glow.hpp"
#include "dfswe/image.hpp"
#include "dfswe/metrics.hpp"

namespace dfswe {

struct HideOptions {
  Tactics tactics;
  ReceiptMode mode = ReceiptMode::keyless;
  double temperature = 0.7;
  std::uint64_t seed = 0;
  int stego_bit_depth = 8;  // 8 or 16
  /// Test-only: keep the circulated stego latent in float and skip the
  /// generate/quantize/re-encode round trip. Extraction then has to go
  /// through extract_from_latents.
  bool debug_skip_quantization = false;

  void validate() const;
};

struct PksResult {
  LatentStack<float> latents;  // z'_st, re-encoded from the quantized image
  LatentStack<float> sampled;  // z, the raw Gaussian draw
  QuantizedImage image;        // I_ge
};

/// Sample z at `temperature`, generate and quantize I_ge, then re-encode
/// the dequantized image so z'_st decodes to a representable image.
PksResult pks_initialize(const GlowModel& model_st, double temperature, std::uint64_t seed,
                         int bit_depth = 0);

struct HideResult {
  QuantizedImage stego;                        // empty when quantization is skipped
  HideReceipt receipt;
  LatentStack<float> stego_latents;            // z'_st after circulation
  std::vector<LatentStack<float>> secret_latents;
  CirculationPlan plan;
  double bpp = 0.0;
};

HideResult hide(const GlowModel& model_se, const GlowModel& model_st,
                std::span<const QuantizedImage> secrets, const HideOptions& opts);

struct ExtractResult {
  std::vector<QuantizedImage> secrets;
  std::vector<LatentStack<float>> latents;  // recovered z_se, zero-filled past the budget
};

/// Without a receipt the plan and keyless inversion follow opts.tactics.
ExtractResult extract(const GlowModel& model_se, const GlowModel& model_st,
                      const QuantizedImage& stego, int k, const HideReceipt* receipt,
                      const HideOptions& opts = {});

ExtractResult extract_from_latents(const GlowModel& model_se, const GlowModel& model_st,
                                   const LatentStack<float>& stego_latents, int k,
                                   const HideReceipt* receipt, const HideOptions& opts = {});

/// The first `budget` flattened elements of a latent stack.
VecX<float> payload(const LatentStack<float>& zs, std::int64_t budget);

/// RMSE between the payloads of the original and recovered secret latents.
double payload_rmse(const LatentStack<float>& original, const LatentStack<float>& recovered,
                    std::int64_t budget);

// ---------------------------------------------------------------- ablation

/// Tactic combinations in report order: direct, hdsr, pks, dct, pks+dct,
/// hdsr+dct, pks+hdsr.
std::vector<Tactics> ablation_rows();
/// ablation_rows() followed by the full method.
std::vector<Tactics> full_ablation_grid();

struct AblationRow {
  Tactics tactics;
  int trials = 0;
  double stego_bpd = 0.0;  // mean bits/dim of the stego under model_st
  double psnr = 0.0;       // mean over finite values
  double ssim = 0.0;
  double rmse = 0.0;
  double payload_rmse = 0.0;
};

struct AblationOptions {
  int trials = 32;
  std::uint64_t seed = 0;
  ReceiptMode mode = ReceiptMode::receipt;
  double temperature = 0.7;
  int stego_bit_depth = 8;
};

/// Trial t hides secrets[t % n] with seed opts.seed + t.
std::vector<AblationRow> ablate(const GlowModel& model_se, const GlowModel& model_st,
                                std::span<const QuantizedImage> secrets,
                                std::span<const Tactics> grid, const AblationOptions& opts);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace dfswe
