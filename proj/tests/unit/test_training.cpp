#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "dfswe/storage.hpp"
#include "dfswe/training.hpp"
#include "../support/synthetic.hpp"

using namespace dfswe;
namespace dt = dfswe::testing;

namespace {

TrainConfig tiny_config(const std::filesystem::path& out) {
  TrainConfig cfg;
  cfg.out = out;
  cfg.image_size = 16;
  cfg.glow = GlowConfig{3, 16, 16, 2, 2, 8, 8};
  cfg.max_steps = 8;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.warmup_steps = 2;
  cfg.seed = 5;
  cfg.checkpoint_every = 2;
  return cfg;
}

bool same_params(const GlowModel& a, const GlowModel& b) {
  std::vector<const RowMat<float>*> pa, pb;
  a.params().visit([&](const std::string&, const RowMat<float>& m, bool) { pa.push_back(&m); });
  b.params().visit([&](const std::string&, const RowMat<float>& m, bool) { pb.push_back(&m); });
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (std::memcmp(pa[i]->data(), pb[i]->data(), sizeof(float) * pa[i]->size()) != 0)
      return false;
  return true;
}

}  // namespace

TEST_CASE("ingesting a folder") {
  const auto dir = dt::scratch_dir("ingest");
  dt::write_dataset(dir, dt::smooth_scenes(10, 24, 1));
  const auto data = ingest_dataset(dir, 16);
  CHECK(data.size() == 10);
  CHECK(data.skipped == 0);
  CHECK(data.images[0].h == 16);
  CHECK(data.images[0].c == 3);

  write_text_atomic(dir / "img_0003.png", "corrupt");
  const auto partial = ingest_dataset(dir, 16);
  CHECK(partial.size() == 9);
  CHECK(partial.skipped == 1);

  const auto empty = dt::scratch_dir("ingest_empty");
  CHECK_THROWS(ingest_dataset(empty, 16));
  CHECK_THROWS_AS(ingest_dataset(empty / "missing", 16), IoError);
}

TEST_CASE("grayscale images are replicated to RGB") {
  QuantizedImage gray(1, 4, 4);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) gray.pixels[i] = std::uint16_t(i * 10);
  const auto rgb = prepare_image(gray, 4);
  REQUIRE(rgb.c == 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(rgb.at(c, y, x) == gray.at(0, y, x));
}

TEST_CASE("images are center-cropped and area-resized") {
  QuantizedImage wide(3, 2, 6);
  for (int c = 0; c < 3; ++c)
    for (int x = 0; x < 6; ++x) {
      wide.at(c, 0, x) = std::uint16_t(x * 40);
      wide.at(c, 1, x) = std::uint16_t(x * 40 + 20);
    }
  const auto out = prepare_image(wide, 1);
  // Crop keeps columns 2..3; the single output pixel is their mean.
  CHECK(out.at(0, 0, 0) == (80 + 100 + 120 + 140) / 4);

  QuantizedImage deep(1, 2, 2, 16);
  deep.pixels = {65535, 65535, 0, 0};
  const auto top = prepare_image(deep, 2);
  CHECK(top.at(0, 0, 0) == 255);
  CHECK(top.at(0, 1, 0) == 0);
}

TEST_CASE("batch order is deterministic and covers each epoch") {
  const BatchSampler s(10, 3, 7);
  CHECK(s.steps_per_epoch() == 3);
  CHECK(s.indices(4) == BatchSampler(10, 3, 7).indices(4));
  std::vector<std::size_t> epoch;
  for (int i = 0; i < 3; ++i)
    for (auto j : s.indices(i)) epoch.push_back(j);
  std::sort(epoch.begin(), epoch.end());
  CHECK(std::adjacent_find(epoch.begin(), epoch.end()) == epoch.end());
  CHECK_THROWS_AS(BatchSampler(2, 3, 0), ConfigError);
}

TEST_CASE("config errors precede any compute") {
  auto cfg = tiny_config("unused.dfswe");
  cfg.data_dir = "/nonexistent/dir";
  cfg.glow.levels = 5;  // 16 is not divisible by 32
  CHECK_THROWS_AS(train(cfg), ConfigError);
  cfg.glow.levels = 2;
  cfg.image_size = 32;
  CHECK_THROWS_AS(train(cfg), ConfigError);
}

TEST_CASE("the training loss is the mean negative log-likelihood") {
  const auto data = dt::as_dataset(dt::smooth_scenes(8, 16, 3));
  Trainer trainer(tiny_config("unused.dfswe"));
  const auto batch = make_batch(data, {0, 1, 2, 3}, 1, 0);
  const auto stats = trainer.step(batch);
  CHECK(std::isfinite(stats.loss_bpd));
  CHECK(stats.step == 1);
  CHECK(trainer.model().actnorm_initialized());

  // Re-evaluate with the gradient path and with the likelihood path.
  auto grad = trainer.model().params().zeros_like();
  const double loss = trainer.model().loss_and_gradient(batch, grad);
  double nats = 0.0;
  for (int b = 0; b < 4; ++b)
    nats += log_likelihood(trainer.model(), ImageTensor<float>{batch.sample(b)}).nats;
  CHECK(loss == doctest::Approx(-nats / 4 / (768 * std::numbers::ln2) + 8).epsilon(1e-6));
}

TEST_CASE("resuming reproduces the next step exactly") {
  const auto dir = dt::scratch_dir("resume");
  const auto data = dt::as_dataset(dt::smooth_scenes(12, 16, 4));
  const auto cfg = tiny_config(dir / "m.dfswe");
  const BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);

  Trainer a(cfg);
  for (int s = 0; s < 3; ++s) a.step(make_batch(data, sampler.indices(s), cfg.seed, s));
  a.save(cfg.out);
  const auto next = a.step(make_batch(data, sampler.indices(3), cfg.seed, 3));

  auto b = Trainer::resume(cfg.out);
  CHECK(b.steps_done() == 3);
  const auto again = b.step(make_batch(data, sampler.indices(3), cfg.seed, 3));
  CHECK(again.loss_bpd == next.loss_bpd);
  CHECK(again.grad_norm == next.grad_norm);
  CHECK(same_params(a.model(), b.model()));
}

TEST_CASE("divergence keeps the last good checkpoint") {
  const auto dir = dt::scratch_dir("diverge");
  const auto data = dt::as_dataset(dt::smooth_scenes(16, 16, 5));
  const auto cfg = tiny_config(dir / "m.dfswe");
  auto poison = [](std::int64_t step, Tensor<float>& batch) {
    if (step == 4) batch.data(0, 0) = NAN;
  };
  CHECK_THROWS_AS(train_on(data, cfg, {}, poison), TrainingDiverged);
  REQUIRE(std::filesystem::exists(cfg.out));
  const auto file = read_checkpoint_file(cfg.out);
  CHECK(file.header["trainer"]["step"] == 4);
  const auto model = load_checkpoint(cfg.out);
  CHECK_NOTHROW(model.validate());
}

TEST_CASE("a short run writes a loadable final checkpoint") {
  const auto dir = dt::scratch_dir("train_dir");
  dt::write_dataset(dir / "data", dt::smooth_scenes(12, 16, 6));
  auto cfg = tiny_config(dir / "final.dfswe");
  cfg.data_dir = dir / "data";
  cfg.max_steps = 3;
  std::vector<double> losses;
  const auto path = train(cfg, [&](const StepStats& s) { losses.push_back(s.loss_bpd); });
  CHECK(losses.size() == 3);
  const auto file = read_checkpoint_file(path);
  CHECK(file.header["train"]["batch_size"] == 4);
  CHECK(file.header["train"].get<TrainConfig>().glow == cfg.glow);
  CHECK(load_checkpoint(path).config() == cfg.glow);
}
