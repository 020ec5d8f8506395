// Acceptance suite: one line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/LU>
#include <spdlog/spdlog.h>

#include "dfswe/circulation.hpp"
#include "dfswe/metrics.hpp"
#include "dfswe/pipeline.hpp"
#include "dfswe/storage.hpp"
#include "dfswe/training.hpp"
#include "../support/fuzz.hpp"
#include "../support/perturb.hpp"
#include "../support/synthetic.hpp"

using namespace dfswe;
namespace dt = dfswe::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double min_of(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

template <typename Scalar>
ImageTensor<Scalar> single(const Tensor<Scalar>& t) {
  return {t, Domain::model_space};
}

const dt::DeskModels& desk() { return dt::desk_models(); }

HideOptions single_secret_options(ReceiptMode mode, int depth, bool skip, std::uint64_t seed) {
  HideOptions o;
  o.mode = mode;
  o.stego_bit_depth = depth;
  o.debug_skip_quantization = skip;
  o.seed = seed;
  return o;
}

// ------------------------------------------------------------------ criteria

Outcome flow_bijectivity() {
  const auto& model = desk().secret;
  const auto images = dt::held_out_scenes(64);
  const auto t0 = Clock::now();
  std::vector<Tensor<float>> samples;
  for (const auto& img : images) samples.push_back(dequantize<float>(img).pixels);
  const auto batch = stack<float>(samples);
  const auto back = model.inverse_batch(model.forward_batch(batch).blocks);
  const double err = (back.data - batch.data).cwiseAbs().maxCoeff();
  const double secs = seconds_since(t0);
  return {err < 1e-4 && secs < 30.0,
          fmt("max |inverse(forward(x)) - x| = %.3g (< 1e-4) over 64 images, %.2f s (< 30 s)", err,
              secs)};
}

Outcome logdet_correctness() {
  const GlowConfig toy{2, 4, 4, 2, 2, 8, 8};
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    Glow<double> model(toy, 100 + draw);
    dt::perturb(model, 200 + draw, 0.1);
    const auto x = dt::random_images<double>(1, toy, 300 + draw);
    const double logdet = model.forward(single(x)).second;
    const auto D = x.data.size();
    Eigen::MatrixXd J(D, D);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < D; ++i) {
      auto xp = x, xm = x;
      xp.data.data()[i] += h;
      xm.data.data()[i] -= h;
      J.col(i) = (flatten(model.forward(single(xp)).first) -
                  flatten(model.forward(single(xm)).first)) /
                 (2 * h);
    }
    const double oracle = Eigen::PartialPivLU<Eigen::MatrixXd>(J)
                              .matrixLU()
                              .diagonal()
                              .array()
                              .abs()
                              .log()
                              .sum();
    worst = std::max(worst, std::abs(logdet - oracle) / std::abs(oracle));
  }
  return {worst <= 1e-3, fmt("worst relative logdet error %.3g (<= 1e-3) over 10 draws, D = 32",
                             worst)};
}

Outcome dimension_accounting() {
  int checked = 0, bad = 0;
  for (int c : {1, 3})
    for (int h : {16, 32, 64})
      for (int w : {16, 32, 64})
        for (int levels = 1; levels <= 4; ++levels) {
          if (h % (1 << levels) || w % (1 << levels)) continue;
          std::int64_t sum = 0;
          for (const auto& b : latent_shapes({c, h, w, levels, 1, 8, 8})) sum += b.size();
          ++checked;
          if (sum != std::int64_t(c) * h * w) ++bad;
        }
  return {bad == 0 && checked > 0, fmt("%d configs checked, %d mismatches", checked, bad)};
}

Outcome dct_algebra() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(2, 400);
  std::uniform_real_distribution<double> u(-3, 3);
  double worst_inv = 0.0, worst_mean = 0.0, worst_std = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = std::size_t(len(rng));
    auto draw = [&](double m, double s) {
      std::normal_distribution<double> d(m, s);
      std::vector<double> v(n);
      for (auto& x : v) x = d(rng);
      return v;
    };
    const auto src = draw(u(rng), std::exp(u(rng)));
    const auto tgt = draw(u(rng), std::exp(u(rng)));
    const auto p = dct_fit(std::span<const double>(src), std::span<const double>(tgt));
    const auto y = dct_apply(std::span<const double>(src), p);
    const auto back = dct_invert(std::span<const double>(y), p);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num += (back[i] - src[i]) * (back[i] - src[i]);
      den += src[i] * src[i];
    }
    worst_inv = std::max(worst_inv, std::sqrt(num / den));
    const auto ys = population_stats(std::span<const double>(y));
    const auto ts = population_stats(std::span<const double>(tgt));
    worst_mean = std::max(worst_mean, std::abs(ys.mean - ts.mean) / std::max(std::abs(ts.mean), ts.std));
    worst_std = std::max(worst_std, std::abs(ys.std - ts.std) / ts.std);
  }
  const std::vector<double> hs{0, 2}, ht{10, 14};
  const auto hp = dct_fit(std::span<const double>(hs), std::span<const double>(ht));
  const bool hand = hp.scale() == 2.0 && hp.shift() == 10.0 &&
                    dct_apply(std::span<const double>(hs), hp) == ht;
  return {worst_inv <= 1e-6 && worst_mean <= 1e-5 && worst_std <= 1e-5 && hand,
          fmt("10^4 segments: inverse rel %.3g (<= 1e-6), mean rel %.3g, std rel %.3g (<= 1e-5), "
              "hand example Std=2 Mean=10 %s",
              worst_inv, worst_mean, worst_std, hand ? "exact" : "WRONG")};
}

Outcome circulation_round_trip() {
  const auto& m = desk();
  const auto secrets = dt::held_out_scenes(6);
  double receipt_err = 0.0, keyless_err = 0.0;
  for (int k : {1, 3}) {
    std::vector<QuantizedImage> s(secrets.begin(), secrets.begin() + k);
    auto opts = single_secret_options(ReceiptMode::receipt, 8, true, 5 + k);
    const auto hidden = hide(m.secret, m.stego, s, opts);
    const auto got = extract_from_latents(m.secret, m.stego, hidden.stego_latents, k,
                                          &hidden.receipt, opts);
    for (int j = 0; j < k; ++j) {
      const auto a = payload(hidden.secret_latents[j], hidden.plan.budget);
      const auto b = payload(got.latents[j], hidden.plan.budget);
      receipt_err = std::max(receipt_err, double((a - b).cwiseAbs().maxCoeff()));
    }

    opts.mode = ReceiptMode::keyless;
    const auto kl = hide(m.secret, m.stego, s, opts);
    const auto kg = extract_from_latents(m.secret, m.stego, kl.stego_latents, k, nullptr, opts);
    for (const auto& seg : kl.plan.segments) {
      const auto flat = flatten(kl.secret_latents[seg.secret]);
      const auto rec = flatten(kg.latents[seg.secret]);
      std::span<const float> src(flat.data() + seg.payload_offset, std::size_t(seg.length));
      const auto st = population_stats(src);
      for (std::int64_t e = 0; e < seg.length; ++e) {
        const double expect = (src[e] - st.mean) / st.std;
        keyless_err = std::max(keyless_err, std::abs(rec[seg.payload_offset + e] - expect));
      }
    }
  }
  return {receipt_err <= 1e-5 && keyless_err <= 1e-5,
          fmt("desk models, k in {1,3}: receipt payload max err %.3g (<= 1e-5), keyless "
              "standardized max err %.3g (<= 1e-5)",
              receipt_err, keyless_err)};
}

Outcome capacity() {
  const auto& m = desk();
  const auto s = dt::held_out_scenes(3);
  HideOptions o;
  const double one = hide(m.secret, m.stego, std::vector<QuantizedImage>{s[0]}, o).bpp;
  const double three = hide(m.secret, m.stego, s, o).bpp;
  return {one == 24.0 && three == 72.0, fmt("k=1: %.17g bpp (== 24), k=3: %.17g bpp (== 72)", one, three)};
}

struct FidelityRun {
  std::vector<double> psnr;
  std::vector<double> payload_rmse;
};

FidelityRun single_secret_runs(const std::vector<QuantizedImage>& secrets, ReceiptMode mode,
                               int depth, bool skip) {
  const auto& m = desk();
  FidelityRun out;
  for (std::size_t t = 0; t < secrets.size(); ++t) {
    const std::vector<QuantizedImage> s{secrets[t]};
    const auto opts = single_secret_options(mode, depth, skip, 1000 + t);
    const auto hidden = hide(m.secret, m.stego, s, opts);
    const auto* receipt = mode == ReceiptMode::receipt ? &hidden.receipt : nullptr;
    const auto got = skip ? extract_from_latents(m.secret, m.stego, hidden.stego_latents, 1,
                                                 receipt, opts)
                          : extract(m.secret, m.stego, hidden.stego, 1, receipt, opts);
    out.psnr.push_back(psnr(secrets[t], got.secrets[0]));
    out.payload_rmse.push_back(
        payload_rmse(hidden.secret_latents[0], got.latents[0], hidden.plan.budget));
  }
  return out;
}

Outcome end_to_end_fidelity() {
  const auto secrets = dt::held_out_scenes(32);
  desk();
  const auto t0 = Clock::now();
  const auto skip = single_secret_runs(secrets, ReceiptMode::receipt, 8, true);
  const auto deep = single_secret_runs(secrets, ReceiptMode::receipt, 16, false);
  const auto shallow = single_secret_runs(secrets, ReceiptMode::receipt, 8, false);
  const double secs = seconds_since(t0);
  const double a = mean(skip.psnr), b = mean(deep.psnr), c = mean(shallow.psnr);
  return {a >= 35.0 && b >= 25.0 && b > c && secs < 300.0,
          fmt("32 trials, mean PSNR: receipt+float %.2f dB (>= 35), receipt+16-bit %.2f dB "
              "(>= 25), receipt+8-bit %.2f dB (16-bit must exceed), %.1f s (< 300 s)",
              a, b, c, secs)};
}

Outcome ablation_ordering() {
  const auto& m = desk();
  AblationOptions opts;
  opts.trials = 32;
  opts.seed = 77;
  const auto rows = ablate(m.secret, m.stego, dt::held_out_scenes(32),
                           std::vector<Tactics>{{false, false, false}, {true, true, true}}, opts);
  return {rows[1].stego_bpd < rows[0].stego_bpd,
          fmt("32 trials, mean stego bits/dim: full method %.4f < direct replacement %.4f",
              rows[1].stego_bpd, rows[0].stego_bpd)};
}

Outcome multi_image() {
  const auto& m = desk();
  const auto secrets = dt::held_out_scenes(24);
  std::vector<double> all;
  for (int t = 0; t < 8; ++t) {
    const std::vector<QuantizedImage> s(secrets.begin() + 3 * t, secrets.begin() + 3 * t + 3);
    const auto opts = single_secret_options(ReceiptMode::receipt, 16, false, 500 + t);
    const auto hidden = hide(m.secret, m.stego, s, opts);
    const auto got = extract(m.secret, m.stego, hidden.stego, 3, &hidden.receipt, opts);
    for (int j = 0; j < 3; ++j) all.push_back(psnr(s[j], got.secrets[j]));
  }
  return {min_of(all) >= 15.0,
          fmt("k=3, 8 stegos: min PSNR %.2f dB (>= 15), mean %.2f dB", min_of(all), mean(all))};
}

Outcome domain_generalization() {
  const auto in = single_secret_runs(dt::held_out_scenes(32), ReceiptMode::receipt, 16, false);
  const auto out =
      single_secret_runs(dt::plaid_textures(32, 32, 4000000), ReceiptMode::receipt, 16, false);
  const double a = mean(in.payload_rmse), b = mean(out.payload_rmse);
  return {b <= 2.0 * a,
          fmt("receipt+16-bit payload RMSE: plaid %.4g vs smooth scenes %.4g, ratio %.2f (<= 2)", b,
              a, b / a)};
}

Outcome persistence() {
  std::mt19937_64 rng(1234);
  int ckpt_bad = 0, receipt_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int levels = 1 + int(rng() % 2);
    const GlowConfig cfg{1 + int(rng() % 3), 8, 8, levels, 1 + int(rng() % 2),
                         2 + int(rng() % 6), 8};
    GlowModel model(cfg, rng());
    dt::perturb(model, rng(), 0.5);
    model.set_actnorm_initialized(rng() % 2);
    const auto back =
        model_from_checkpoint(decode_checkpoint(encode_checkpoint(model_checkpoint(model))));
    if (!dt::bit_equal(model, back)) ++ckpt_bad;

    const auto r = dt::random_receipt(rng);
    const auto text = serialize_receipt(r);
    const auto parsed = parse_receipt(text);
    if (!dt::receipts_bit_equal(r, parsed) || serialize_receipt(parsed) != text) ++receipt_bad;
  }
  return {ckpt_bad == 0 && receipt_bad == 0,
          fmt("10^3 checkpoints: %d mismatches; 10^3 receipts: %d mismatches", ckpt_bad,
              receipt_bad)};
}

Outcome training_smoke() {
  const auto dir = dt::scratch_dir("acceptance_training");
  TrainConfig cfg;
  cfg.out = dir / "smoke.dfswe";
  cfg.image_size = 16;
  cfg.glow = GlowConfig{3, 16, 16, 2, 4, 32, 8};
  cfg.max_steps = 200;
  cfg.epochs = 100;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.warmup_steps = 20;
  cfg.seed = 3;
  cfg.checkpoint_every = 50;
  const auto data = dt::as_dataset(dt::smooth_scenes(500, 16, 5000000));
  std::vector<double> losses;
  train_on(data, cfg, [&](const StepStats& s) { losses.push_back(s.loss_bpd); });
  const bool ran = losses.size() == 200;
  const double early = ran ? mean({losses.begin(), losses.begin() + 10}) : NAN;
  const double late = ran ? mean({losses.end() - 10, losses.end()}) : NAN;

  auto poisoned = cfg;
  poisoned.out = dir / "poisoned.dfswe";
  poisoned.max_steps = 120;
  bool aborted = false, preserved = false;
  try {
    train_on(data, poisoned, {}, [](std::int64_t step, Tensor<float>& batch) {
      if (step == 110) batch.data(0, 0) = NAN;
    });
  } catch (const TrainingDiverged&) {
    aborted = true;
    try {
      const auto file = read_checkpoint_file(poisoned.out);
      preserved = file.header["trainer"]["step"] == 100;
      (void)model_from_checkpoint(file);
    } catch (const Error&) {
      preserved = false;
    }
  }
  return {ran && late < early && aborted && preserved,
          fmt("200 steps on 500 images: mean bits/dim steps 1-10 %.3f, steps 191-200 %.3f; NaN at "
              "step 111 %s, checkpoint of step 100 %s",
              early, late, aborted ? "aborted" : "NOT aborted", preserved ? "kept" : "LOST")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "flow bijectivity", flow_bijectivity},
      {2, "log-det correctness", logdet_correctness},
      {3, "dimension accounting", dimension_accounting},
      {4, "moment matching algebra", dct_algebra},
      {5, "circulation round trip", circulation_round_trip},
      {6, "capacity", capacity},
      {7, "end-to-end fidelity", end_to_end_fidelity},
      {8, "ablation ordering", ablation_ordering},
      {9, "multi-image", multi_image},
      {10, "domain generalization", domain_generalization},
      {11, "persistence", persistence},
      {12, "training smoke", training_smoke},
  };
  spdlog::set_level(spdlog::level::info);
  desk();
  spdlog::set_level(spdlog::level::warn);

  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
