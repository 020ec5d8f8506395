#include "dfswe/pipeline.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace dfswe {

namespace {

void check_image(const QuantizedImage& img, const GlowConfig& cfg, const char* what) {
  if (img.c != cfg.channels || img.h != cfg.height || img.w != cfg.width)
    throw ShapeError(std::string(what) + " is " + std::to_string(img.c) + "x" +
                     std::to_string(img.h) + "x" + std::to_string(img.w) + ", model expects " +
                     std::to_string(cfg.channels) + "x" + std::to_string(cfg.height) + "x" +
                     std::to_string(cfg.width));
}

LatentStack<float> encode(const GlowModel& model, const QuantizedImage& img) {
  return model.forward(dequantize<float>(img)).first;
}

CirculationPlan plan_for(const GlowModel& model_se, const GlowModel& model_st, int k,
                         bool hdsr) {
  return plan_allocation(model_se.config(), model_st.config(), k, hdsr);
}

std::vector<LatentStack<float>> uncirculate(const LatentStack<float>& stego_latents,
                                            const CirculationPlan& plan,
                                            const HideReceipt* receipt, const Tactics& tactics) {
  if (receipt) return circulate_extract(stego_latents, plan, *receipt);
  return circulate_extract_keyless(stego_latents, plan, tactics.dct);
}

}  // namespace

void HideOptions::validate() const {
  if (stego_bit_depth != 8 && stego_bit_depth != 16)
    throw ConfigError("stego bit depth must be 8 or 16");
  if (!(temperature >= 0.0) || !std::isfinite(temperature))
    throw ConfigError("temperature must be a finite value >= 0");
}

PksResult pks_initialize(const GlowModel& model_st, double temperature, std::uint64_t seed,
                         int bit_depth) {
  PksResult r;
  r.sampled = sample_latents<float>(model_st.config(), temperature, seed);
  r.image = generate(model_st, r.sampled, bit_depth);
  r.latents = encode(model_st, r.image);
  return r;
}

HideResult hide(const GlowModel& model_se, const GlowModel& model_st,
                std::span<const QuantizedImage> secrets, const HideOptions& opts) {
  opts.validate();
  if (secrets.empty()) throw ConfigError("hide needs at least one secret image");
  for (const auto& s : secrets) check_image(s, model_se.config(), "secret image");

  HideResult out;
  const int k = int(secrets.size());
  out.plan = plan_for(model_se, model_st, k, opts.tactics.hdsr);

  // Step 1: initial stego latent.
  LatentStack<float> base;
  if (opts.tactics.pks)
    base = pks_initialize(model_st, opts.temperature, opts.seed, opts.stego_bit_depth).latents;
  else
    base = sample_latents<float>(model_st.config(), opts.temperature, opts.seed);

  // Step 2: secret latents.
  for (const auto& s : secrets) out.secret_latents.push_back(encode(model_se, s));

  // Step 3: circulation.
  auto [circulated, receipt] =
      circulate_hide<float>(out.secret_latents, base, out.plan, opts.mode, opts.tactics.dct);
  receipt.seed = opts.seed;
  receipt.temperature = opts.temperature;
  receipt.tactics = opts.tactics;
  out.receipt = std::move(receipt);
  out.stego_latents = std::move(circulated);

  // Step 4: stego image.
  if (!opts.debug_skip_quantization)
    out.stego = generate(model_st, out.stego_latents, opts.stego_bit_depth);

  std::vector<PayloadShape> shapes;
  for (const auto& s : secrets) shapes.push_back({s.c, s.h, s.w, s.bit_depth});
  out.bpp = bpp(shapes, model_st.config().height, model_st.config().width);
  return out;
}

ExtractResult extract_from_latents(const GlowModel& model_se, const GlowModel& model_st,
                                   const LatentStack<float>& stego_latents, int k,
                                   const HideReceipt* receipt, const HideOptions& opts) {
  if (k < 1) throw ConfigError("number of secrets must be >= 1");
  if (receipt && receipt->k != k)
    throw ReceiptMismatch("receipt is for k = " + std::to_string(receipt->k) +
                          " secrets, extraction asked for k = " + std::to_string(k));
  const bool hdsr = receipt ? receipt->tactics.hdsr : opts.tactics.hdsr;
  const auto plan = plan_for(model_se, model_st, k, hdsr);

  ExtractResult out;
  out.latents = uncirculate(stego_latents, plan, receipt, opts.tactics);
  for (const auto& z : out.latents) out.secrets.push_back(generate(model_se, z, 8));
  return out;
}

ExtractResult extract(const GlowModel& model_se, const GlowModel& model_st,
                      const QuantizedImage& stego, int k, const HideReceipt* receipt,
                      const HideOptions& opts) {
  check_image(stego, model_st.config(), "stego image");
  return extract_from_latents(model_se, model_st, encode(model_st, stego), k, receipt, opts);
}

VecX<float> payload(const LatentStack<float>& zs, std::int64_t budget) {
  const auto flat = flatten(zs);
  if (budget < 0 || budget > flat.size()) throw ShapeError("payload budget out of range");
  return flat.head(budget);
}

double payload_rmse(const LatentStack<float>& original, const LatentStack<float>& recovered,
                    std::int64_t budget) {
  const Eigen::VectorXd a = payload(original, budget).cast<double>();
  const Eigen::VectorXd b = payload(recovered, budget).cast<double>();
  if (budget == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / double(budget));
}

std::vector<Tactics> ablation_rows() {
  return {
      {false, false, false},  // direct replacement
      {false, true, false},   // hdsr
      {true, false, false},   // pks
      {false, false, true},   // dct
      {true, false, true},    // pks + dct
      {false, true, true},    // hdsr + dct
      {true, true, false},    // pks + hdsr
  };
}

std::vector<Tactics> full_ablation_grid() {
  auto rows = ablation_rows();
  rows.push_back({true, true, true});
  return rows;
}

std::vector<AblationRow> ablate(const GlowModel& model_se, const GlowModel& model_st,
                                std::span<const QuantizedImage> secrets,
                                std::span<const Tactics> grid, const AblationOptions& opts) {
  if (secrets.empty()) throw ConfigError("ablation needs at least one secret image");
  if (opts.trials < 1) throw ConfigError("ablation needs at least one trial");
  std::vector<AblationRow> rows;
  for (const auto& tactics : grid) {
    AblationRow row;
    row.tactics = tactics;
    row.trials = opts.trials;
    double psnr_sum = 0.0;
    int finite = 0;
    for (int t = 0; t < opts.trials; ++t) {
      const auto& secret = secrets[std::size_t(t) % secrets.size()];
      HideOptions ho;
      ho.tactics = tactics;
      ho.mode = opts.mode;
      ho.temperature = opts.temperature;
      ho.seed = opts.seed + std::uint64_t(t);
      ho.stego_bit_depth = opts.stego_bit_depth;
      const auto hidden = hide(model_se, model_st, std::span(&secret, 1), ho);
      row.stego_bpd += log_likelihood(model_st, dequantize<float>(hidden.stego)).bits_per_dim;

      const auto* receipt = opts.mode == ReceiptMode::receipt ? &hidden.receipt : nullptr;
      const auto got = extract(model_se, model_st, hidden.stego, 1, receipt, ho);
      const auto m = compare("trial", secret, got.secrets[0]);
      if (std::isfinite(m.psnr)) {
        psnr_sum += m.psnr;
        ++finite;
      }
      row.ssim += m.ssim;
      row.rmse += m.rmse;
      row.payload_rmse +=
          payload_rmse(hidden.secret_latents[0], got.latents[0], hidden.plan.budget);
    }
    const double n = opts.trials;
    row.stego_bpd /= n;
    row.psnr = finite ? psnr_sum / finite : std::numeric_limits<double>::infinity();
    row.ssim /= n;
    row.rmse /= n;
    row.payload_rmse /= n;
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "tactics,pks,hdsr,dct,trials,stego_bpd,psnr,ssim,rmse,payload_rmse\n";
  for (const auto& r : rows)
    os << r.tactics.label() << ',' << r.tactics.pks << ',' << r.tactics.hdsr << ','
       << r.tactics.dct << ',' << r.trials << ',' << r.stego_bpd << ',' << r.psnr << ','
       << r.ssim << ',' << r.rmse << ',' << r.payload_rmse << '\n';
  return os.str();
}

}  // namespace dfswe
