#include <doctest.h>

#include <random>

#include "dfswe/circulation.hpp"
#include "dfswe/glow.hpp"

using namespace dfswe;

namespace {

const GlowConfig kFull64{3, 64, 64, 4, 1, 8, 8};
const GlowConfig kDesk{3, 32, 32, 3, 1, 8, 8};

template <typename T>
std::span<const T> view(const std::vector<T>& v) {
  return {v.data(), v.size()};
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double mean, double sd) {
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Independent oracle: positions [j*b, (j+1)*b) of the region made of the
/// first `region_blocks` stego blocks, walked element by element.
std::vector<std::pair<int, std::int64_t>> naive_positions(const std::vector<BlockShape>& stego,
                                                          int region_blocks, std::int64_t b,
                                                          int j) {
  std::vector<std::pair<int, std::int64_t>> all;
  for (int blk = 0; blk < region_blocks; ++blk)
    for (std::int64_t i = 0; i < stego[blk].size(); ++i) all.emplace_back(blk, i);
  return {all.begin() + j * b, all.begin() + (j + 1) * b};
}

}  // namespace

TEST_CASE("plan: one secret with shallow-block replacement") {
  const auto plan = plan_allocation(kFull64, kFull64, 1, true);
  CHECK(plan.region_len == 12288 - 1536);
  CHECK(plan.region_len == 10752);
  CHECK(plan.budget == 10752);
  // Payload is exactly secret z_1..z_3, copied into stego z_1..z_3.
  REQUIRE(plan.segments.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(plan.segments[i].block == i);
    CHECK(plan.segments[i].offset == 0);
    CHECK(plan.segments[i].length == plan.stego_shapes[i].size());
  }
  for (const auto& s : plan.segments) CHECK(s.block != 3);
}

TEST_CASE("plan: three secrets split the region evenly") {
  const auto plan = plan_allocation(kFull64, kFull64, 3, true);
  CHECK(plan.budget == 3584);
  CHECK(3 * plan.budget == plan.region_len);
  std::int64_t covered = 0;
  for (const auto& s : plan.segments) covered += s.length;
  CHECK(covered == plan.region_len);
}

TEST_CASE("plan: two secrets without shallow-block replacement") {
  const auto plan = plan_allocation(kFull64, kFull64, 2, false);
  CHECK(plan.region_len == 12288);
  CHECK(plan.budget == 6144);
  CHECK(plan.budget == plan.secret_shapes[0].size());
}

TEST_CASE("plan segments agree with an element-wise walk") {
  for (bool hdsr : {true, false})
    for (int k = 1; k <= 7; ++k) {
      const auto plan = plan_allocation(kDesk, kDesk, k, hdsr);
      const int region_blocks = hdsr ? 2 : 3;
      for (int j = 0; j < k; ++j) {
        std::vector<std::pair<int, std::int64_t>> got;
        std::int64_t expect_payload = 0;
        for (const auto& s : plan.segments) {
          if (s.secret != j) continue;
          CHECK(s.payload_offset == expect_payload);
          expect_payload += s.length;
          for (std::int64_t i = 0; i < s.length; ++i) got.emplace_back(s.block, s.offset + i);
        }
        CAPTURE(k);
        CAPTURE(hdsr);
        CHECK(got == naive_positions(plan.stego_shapes, region_blocks, plan.budget, j));
      }
    }
}

TEST_CASE("plan is deterministic and rejects impossible budgets") {
  const auto a = plan_allocation(kDesk, kDesk, 3, true);
  const auto b = plan_allocation(kDesk, kDesk, 3, true);
  CHECK(a.segments == b.segments);
  CHECK(a.fingerprint == b.fingerprint);
  CHECK(a.fingerprint.size() == 64);
  CHECK(a.fingerprint != plan_allocation(kDesk, kDesk, 2, true).fingerprint);
  CHECK(a.fingerprint != plan_allocation(kDesk, kDesk, 3, false).fingerprint);

  CHECK_THROWS_AS(plan_allocation(kDesk, kDesk, 0, true), ConfigError);
  CHECK_THROWS_AS(plan_allocation(kDesk, kDesk, 3073, false), ConfigError);
}

TEST_CASE("plan with a smaller secret caps the budget at the secret size") {
  const GlowConfig small{3, 16, 16, 3, 1, 8, 8};
  const auto plan = plan_allocation(small, kDesk, 1, true);
  CHECK(plan.budget == small.dims());
}

TEST_CASE("moment matching hand example") {
  const std::vector<double> src{0, 2}, tgt{10, 14};
  const auto p = dct_fit(view(src), view(tgt));
  CHECK(p.mean_src == 1.0);
  CHECK(p.std_src == 1.0);
  CHECK(p.mean_tgt == 12.0);
  CHECK(p.std_tgt == 2.0);
  CHECK(p.scale() == 2.0);
  CHECK(p.shift() == 10.0);
  CHECK(dct_apply(view(src), p) == tgt);
  CHECK(dct_invert(view(tgt), p) == src);

  const auto same = dct_fit(view(src), view(src));
  CHECK(same.scale() == 1.0);
  CHECK(same.shift() == 0.0);
  CHECK(dct_apply(view(src), DctParams{}) == src);
  CHECK(dct_invert(view(src), DctParams{}) == src);
}

TEST_CASE("moment matching rejects degenerate input") {
  const std::vector<double> flat{3, 3, 3}, ok{1, 2, 3}, shorter{1, 2};
  CHECK_THROWS_AS(dct_fit(view(flat), view(ok)), DegenerateSegment);
  CHECK_THROWS_AS(dct_fit(view(ok), view(flat)), DegenerateSegment);
  CHECK_THROWS_AS(dct_fit(view(ok), view(shorter)), ShapeError);
  CHECK_THROWS_AS(dct_invert(view(ok), DctParams{0, 1, 0, 0}), DegenerateSegment);
}

TEST_CASE("moment matching: apply then invert over random segments") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(2, 300);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto n = std::size_t(len(rng));
    const auto src = random_vector(rng, n, u(rng), std::exp(u(rng)));
    const auto tgt = random_vector(rng, n, u(rng), std::exp(u(rng)));
    const auto p = dct_fit(view(src), view(tgt));
    const auto y = dct_apply(view(src), p);
    const auto ys = population_stats(view(y));
    const auto ts = population_stats(view(tgt));
    CHECK(std::abs(ys.mean - ts.mean) <= 1e-9 * std::max(1.0, std::abs(ts.mean)));
    CHECK(std::abs(ys.std - ts.std) <= 1e-9 * ts.std);
    const auto back = dct_invert(view(y), p);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(std::abs(back[i] - src[i]) <= 1e-9 * std::max(1.0, std::abs(src[i])));
  }
}

TEST_CASE("hide keeps untouched blocks and writes moment-matched payloads") {
  const auto plan = plan_allocation(kDesk, kDesk, 2, true);
  const auto stego = sample_latents<float>(kDesk, 0.7, 1);
  const std::vector<LatentStack<float>> secrets{sample_latents<float>(kDesk, 1.0, 2),
                                                sample_latents<float>(kDesk, 1.0, 3)};
  const auto [out, receipt] = circulate_hide<float>(secrets, stego, plan, ReceiptMode::receipt);
  CHECK(out.blocks[2].data == stego.blocks[2].data);
  CHECK(receipt.segments.size() == plan.segments.size());
  CHECK(receipt.plan_fingerprint == plan.fingerprint);

  for (std::size_t i = 0; i < plan.segments.size(); ++i) {
    const auto& seg = plan.segments[i];
    const auto flat = flatten(secrets[seg.secret]);
    std::span<const float> src(flat.data() + seg.payload_offset, std::size_t(seg.length));
    const auto expect = dct_apply(src, receipt.segments[i].params);
    const float* got = out.blocks[seg.block].data.data() + seg.offset;
    for (std::int64_t e = 0; e < seg.length; ++e) CHECK(got[e] == expect[e]);

    std::span<const float> before(stego.blocks[seg.block].data.data() + seg.offset,
                                  std::size_t(seg.length));
    std::span<const float> after(got, std::size_t(seg.length));
    const auto a = population_stats(after), b = population_stats(before);
    CHECK(std::abs(a.mean - b.mean) <= 1e-5 * std::max(1.0, std::abs(b.mean)));
    CHECK(std::abs(a.std - b.std) <= 1e-5 * b.std);
  }
}

TEST_CASE("hide outside the plan leaves positions bit-identical") {
  const GlowConfig cfg{3, 32, 32, 3, 1, 8, 8};
  const auto plan = plan_allocation(cfg, cfg, 5, false);  // 3072 / 5 leaves 2 spare
  const auto stego = sample_latents<float>(cfg, 0.7, 4);
  std::vector<LatentStack<float>> secrets;
  for (int j = 0; j < 5; ++j) secrets.push_back(sample_latents<float>(cfg, 1.0, 10 + j));
  const auto out = circulate_hide<float>(secrets, stego, plan, ReceiptMode::keyless).first;
  const auto a = flatten(out), b = flatten(stego);
  for (std::int64_t i = 5 * plan.budget; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("direct replacement reproduces the secret stack") {
  const auto plan = plan_allocation(kDesk, kDesk, 1, false);
  const auto stego = sample_latents<float>(kDesk, 0.7, 5);
  const std::vector<LatentStack<float>> secrets{sample_latents<float>(kDesk, 1.0, 6)};
  const auto [out, receipt] =
      circulate_hide<float>(secrets, stego, plan, ReceiptMode::keyless, false);
  CHECK(flatten(out) == flatten(secrets[0]));
  CHECK(receipt.segments.empty());
}

TEST_CASE("receipt extraction inverts hiding exactly") {
  for (int k : {1, 2, 3}) {
    const auto plan = plan_allocation(kDesk, kDesk, k, true);
    const auto stego = sample_latents<float>(kDesk, 0.7, 100 + k);
    std::vector<LatentStack<float>> secrets;
    for (int j = 0; j < k; ++j) secrets.push_back(sample_latents<float>(kDesk, 1.3, 200 + j));
    const auto [out, receipt] = circulate_hide<float>(secrets, stego, plan, ReceiptMode::receipt);
    const auto got = circulate_extract(out, plan, receipt);
    REQUIRE(int(got.size()) == k);
    for (int j = 0; j < k; ++j) {
      const auto a = flatten(secrets[j]), b = flatten(got[j]);
      for (std::int64_t i = 0; i < plan.budget; ++i)
        CHECK(std::abs(b[i] - a[i]) <= 1e-6f * std::max(1.0f, std::abs(a[i])));
      CHECK(b.tail(b.size() - plan.budget).cwiseAbs().maxCoeff() == 0.0f);
    }
  }
}

TEST_CASE("keyless extraction returns the standardized payload") {
  const auto plan = plan_allocation(kDesk, kDesk, 2, true);
  const auto stego = sample_latents<float>(kDesk, 0.7, 9);
  std::vector<LatentStack<float>> secrets{sample_latents<float>(kDesk, 1.7, 10),
                                          sample_latents<float>(kDesk, 0.4, 11)};
  for (auto& b : secrets[0].blocks) b.data.array() += 0.3f;
  const auto out = circulate_hide<float>(secrets, stego, plan, ReceiptMode::keyless).first;
  const auto got = circulate_extract_keyless(out, plan);
  for (const auto& seg : plan.segments) {
    const auto flat = flatten(secrets[seg.secret]);
    std::span<const float> src(flat.data() + seg.payload_offset, std::size_t(seg.length));
    const auto st = population_stats(src);
    const auto rec = flatten(got[seg.secret]);
    for (std::int64_t e = 0; e < seg.length; ++e) {
      const double expect = (src[e] - st.mean) / st.std;
      CHECK(std::abs(rec[seg.payload_offset + e] - expect) <= 1e-5 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST_CASE("extraction validates receipts against the plan") {
  const auto plan = plan_allocation(kDesk, kDesk, 2, true);
  const auto stego = sample_latents<float>(kDesk, 0.7, 1);
  const std::vector<LatentStack<float>> secrets{sample_latents<float>(kDesk, 1.0, 2),
                                                sample_latents<float>(kDesk, 1.0, 3)};
  auto receipt = circulate_hide<float>(secrets, stego, plan, ReceiptMode::receipt).second;

  auto tampered = receipt;
  tampered.plan_fingerprint[0] = tampered.plan_fingerprint[0] == 'a' ? 'b' : 'a';
  CHECK_THROWS_AS(circulate_extract(stego, plan, tampered), ReceiptMismatch);

  const auto plan3 = plan_allocation(kDesk, kDesk, 3, true);
  CHECK_THROWS_AS(circulate_extract(stego, plan3, receipt), ReceiptMismatch);

  auto short_receipt = receipt;
  short_receipt.segments.pop_back();
  CHECK_THROWS_AS(circulate_extract(stego, plan, short_receipt), ReceiptMismatch);

  const std::vector<LatentStack<float>> one{secrets[0]};
  CHECK_THROWS_AS(circulate_hide<float>(one, stego, plan, ReceiptMode::receipt), ShapeError);
}

TEST_CASE("keyless extraction rejects a constant segment") {
  const auto plan = plan_allocation(kDesk, kDesk, 1, true);
  const auto zeros = zero_latents<float>(latent_shapes(kDesk));
  CHECK_THROWS_AS(circulate_extract_keyless(zeros, plan), DegenerateSegment);
}
