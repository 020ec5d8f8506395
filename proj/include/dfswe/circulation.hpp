#pragma once

// Reversible circulation between a secret flow's latents and a stego flow's
// latents: deterministic allocation of secret payloads onto stego latent
// positions, per-segment moment matching, and the exact inverse.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfswe/config.hpp"
#include "dfswe/errors.hpp"
#include "dfswe/tensor.hpp"

namespace dfswe {

/// Switches for the three circulation tactics. All on is the full method.
struct Tactics {
  bool pks = true;   // prior knowledge sampling
  bool hdsr = true;  // replace only the shallow stego blocks
  bool dct = true;   // per-segment moment matching

  std::string label() const;
  bool operator==(const Tactics&) const = default;
};

enum class ReceiptMode { keyless, receipt };

std::string to_string(ReceiptMode mode);
ReceiptMode receipt_mode_from_string(const std::string& s);

/// One contiguous run of secret payload written into one stego block.
struct PlanSegment {
  int secret = 0;                   // 0-based secret index
  int block = 0;                    // 0-based stego block index
  std::int64_t offset = 0;          // offset inside the stego block
  std::int64_t length = 0;
  std::int64_t payload_offset = 0;  // offset inside the secret's flattened stack

  bool operator==(const PlanSegment&) const = default;
};

struct CirculationPlan {
  int k = 0;
  bool hdsr = true;
  std::vector<BlockShape> secret_shapes;
  std::vector<BlockShape> stego_shapes;
  std::int64_t region_len = 0;  // R
  std::int64_t budget = 0;      // b, payload elements per secret
  std::vector<PlanSegment> segments;
  std::string fingerprint;      // hex digest of the plan inputs
};

/// SHA-256 over the canonical JSON of everything the plan depends on.
std::string plan_fingerprint(const GlowConfig& secret_cfg, const GlowConfig& stego_cfg, int k,
                             bool hdsr);

/// Secret j's payload (its first b flattened latents) goes to positions
/// [j*b, (j+1)*b) of the replace region: stego blocks 1..L-1 with HDSR,
/// the whole stack without it.
CirculationPlan plan_allocation(const GlowConfig& secret_cfg, const GlowConfig& stego_cfg, int k,
                                bool hdsr);

/// Moment-matching scalars of one segment (population statistics).
struct DctParams {
  double mean_src = 0.0;
  double std_src = 1.0;
  double mean_tgt = 0.0;
  double std_tgt = 1.0;

  double scale() const { return std_tgt / std_src; }
  double shift() const { return mean_tgt - scale() * mean_src; }
  bool operator==(const DctParams&) const = default;
};

struct SegmentStats {
  double mean = 0.0;
  double std = 0.0;
};

template <typename Scalar>
SegmentStats population_stats(std::span<const Scalar> x) {
  SegmentStats s;
  if (x.empty()) return s;
  double sum = 0.0;
  for (Scalar v : x) sum += double(v);
  s.mean = sum / double(x.size());
  double ss = 0.0;
  for (Scalar v : x) {
    const double d = double(v) - s.mean;
    ss += d * d;
  }
  s.std = std::sqrt(ss / double(x.size()));
  return s;
}

template <typename Scalar>
DctParams dct_fit(std::span<const Scalar> src, std::span<const Scalar> tgt) {
  if (src.size() != tgt.size()) throw ShapeError("dct_fit: segment lengths differ");
  if (src.size() < 2) throw DegenerateSegment("dct_fit: segments need at least two elements");
  const auto a = population_stats(src);
  const auto b = population_stats(tgt);
  if (!(a.std > 0.0)) throw DegenerateSegment("dct_fit: source segment has zero variance");
  if (!(b.std > 0.0)) throw DegenerateSegment("dct_fit: target segment has zero variance");
  return {a.mean, a.std, b.mean, b.std};
}

/// x * Std + Mean, elementwise.
template <typename Scalar>
std::vector<Scalar> dct_apply(std::span<const Scalar> x, const DctParams& p) {
  const double scale = p.scale(), shift = p.shift();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = Scalar(double(x[i]) * scale + shift);
  return out;
}

/// (y - Mean) / Std, elementwise.
template <typename Scalar>
std::vector<Scalar> dct_invert(std::span<const Scalar> y, const DctParams& p) {
  const double scale = p.scale();
  if (!(std::abs(scale) > 0.0) || !std::isfinite(scale))
    throw DegenerateSegment("dct_invert: Std is zero or non-finite");
  const double shift = p.shift();
  std::vector<Scalar> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = Scalar((double(y[i]) - shift) / scale);
  return out;
}

struct SegmentRecord {
  int secret_index = 0;
  int block_index = 0;
  std::int64_t offset = 0;
  std::int64_t length = 0;
  DctParams params;

  bool operator==(const SegmentRecord&) const = default;
};

/// What the receiver needs besides the two models. Keyless receipts carry
/// no segment scalars.
struct HideReceipt {
  int version = 1;
  ReceiptMode mode = ReceiptMode::keyless;
  int k = 1;
  std::string plan_fingerprint;
  std::uint64_t seed = 0;
  double temperature = 0.7;
  Tactics tactics;
  std::vector<SegmentRecord> segments;

  bool operator==(const HideReceipt&) const = default;
};

namespace detail {

template <typename Scalar>
std::span<Scalar> block_span(Tensor<Scalar>& t) {
  return {t.data.data(), std::size_t(t.data.size())};
}
template <typename Scalar>
std::span<const Scalar> block_span(const Tensor<Scalar>& t) {
  return {t.data.data(), std::size_t(t.data.size())};
}

template <typename Scalar>
void check_plan_inputs(const CirculationPlan& plan, const LatentStack<Scalar>& stego) {
  check_shapes(stego, plan.stego_shapes);
}

template <typename Scalar>
std::vector<LatentStack<Scalar>> assemble_secrets(
    const CirculationPlan& plan, const std::vector<VecX<Scalar>>& payloads) {
  std::vector<LatentStack<Scalar>> out;
  std::int64_t total = 0;
  for (const auto& s : plan.secret_shapes) total += s.size();
  for (int j = 0; j < plan.k; ++j) {
    VecX<Scalar> flat = VecX<Scalar>::Zero(total);
    flat.head(plan.budget) = payloads[j];
    out.push_back(unflatten(flat, plan.secret_shapes));
  }
  return out;
}

}  // namespace detail

/// Writes every secret's payload into a copy of the stego latents. With
/// `dct` each segment is moment-matched to the values it replaces;
/// otherwise it is copied verbatim. Positions outside the plan keep their
/// original values.
template <typename Scalar>
std::pair<LatentStack<Scalar>, HideReceipt> circulate_hide(
    std::span<const LatentStack<Scalar>> secrets, const LatentStack<Scalar>& stego,
    const CirculationPlan& plan, ReceiptMode mode, bool dct = true) {
  if (int(secrets.size()) != plan.k)
    throw ShapeError("circulate_hide: got " + std::to_string(secrets.size()) +
                     " secrets, plan expects " + std::to_string(plan.k));
  detail::check_plan_inputs(plan, stego);
  std::vector<VecX<Scalar>> flats;
  for (const auto& s : secrets) {
    check_shapes(s, plan.secret_shapes);
    flats.push_back(flatten(s));
  }

  LatentStack<Scalar> out = stego;
  HideReceipt receipt;
  receipt.mode = mode;
  receipt.k = plan.k;
  receipt.plan_fingerprint = plan.fingerprint;
  receipt.tactics.hdsr = plan.hdsr;
  receipt.tactics.dct = dct;
  for (const auto& seg : plan.segments) {
    const auto& flat = flats[seg.secret];
    std::span<const Scalar> src(flat.data() + seg.payload_offset, std::size_t(seg.length));
    auto dst = detail::block_span(out.blocks[seg.block]).subspan(seg.offset, seg.length);
    const auto tgt = detail::block_span(stego.blocks[seg.block]).subspan(seg.offset, seg.length);
    const DctParams params = dct ? dct_fit(src, tgt) : DctParams{};
    const auto moved = dct_apply(src, params);
    std::copy(moved.begin(), moved.end(), dst.begin());
    if (mode == ReceiptMode::receipt)
      receipt.segments.push_back({seg.secret, seg.block, seg.offset, seg.length, params});
  }
  return {std::move(out), std::move(receipt)};
}

/// Keyless extraction: each recovered segment is standardized with its own
/// statistics (the secret side is assumed to follow the N(0, 1) prior).
/// Latent positions beyond the payload are zero-filled.
template <typename Scalar>
std::vector<LatentStack<Scalar>> circulate_extract_keyless(const LatentStack<Scalar>& stego,
                                                           const CirculationPlan& plan,
                                                           bool dct = true) {
  detail::check_plan_inputs(plan, stego);
  std::vector<VecX<Scalar>> payloads(plan.k, VecX<Scalar>::Zero(plan.budget));
  for (const auto& seg : plan.segments) {
    const auto y = detail::block_span(stego.blocks[seg.block]).subspan(seg.offset, seg.length);
    std::vector<Scalar> x;
    if (dct) {
      const auto st = population_stats(y);
      if (!(st.std > 0.0))
        throw DegenerateSegment("keyless extraction: recovered segment has zero variance");
      x = dct_invert(y, DctParams{0.0, 1.0, st.mean, st.std});
    } else {
      x.assign(y.begin(), y.end());
    }
    std::copy(x.begin(), x.end(), payloads[seg.secret].data() + seg.payload_offset);
  }
  return detail::assemble_secrets(plan, payloads);
}

/// Extraction driven by a receipt; receipt-mode receipts invert each segment
/// exactly with the stored scalars.
template <typename Scalar>
std::vector<LatentStack<Scalar>> circulate_extract(const LatentStack<Scalar>& stego,
                                                   const CirculationPlan& plan,
                                                   const HideReceipt& receipt) {
  if (receipt.k != plan.k)
    throw ReceiptMismatch("receipt is for k = " + std::to_string(receipt.k) +
                          " secrets, extraction asked for k = " + std::to_string(plan.k));
  if (receipt.plan_fingerprint != plan.fingerprint)
    throw ReceiptMismatch("receipt plan fingerprint does not match the models and k");
  if (receipt.mode == ReceiptMode::keyless)
    return circulate_extract_keyless(stego, plan, receipt.tactics.dct);

  detail::check_plan_inputs(plan, stego);
  if (receipt.segments.size() != plan.segments.size())
    throw ReceiptMismatch("receipt has " + std::to_string(receipt.segments.size()) +
                          " segments, plan has " + std::to_string(plan.segments.size()));
  std::vector<VecX<Scalar>> payloads(plan.k, VecX<Scalar>::Zero(plan.budget));
  for (std::size_t i = 0; i < plan.segments.size(); ++i) {
    const auto& seg = plan.segments[i];
    const auto& rec = receipt.segments[i];
    if (rec.secret_index != seg.secret || rec.block_index != seg.block ||
        rec.offset != seg.offset || rec.length != seg.length)
      throw ReceiptMismatch("receipt segment " + std::to_string(i) + " does not match the plan");
    const auto y = detail::block_span(stego.blocks[seg.block]).subspan(seg.offset, seg.length);
    const auto x = dct_invert(y, rec.params);
    std::copy(x.begin(), x.end(), payloads[seg.secret].data() + seg.payload_offset);
  }
  return detail::assemble_secrets(plan, payloads);
}

}  // namespace dfswe
