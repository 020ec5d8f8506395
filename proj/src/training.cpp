#include "dfswe/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "dfswe/storage.hpp"

namespace dfswe {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t tag) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(a),
                    std::uint32_t(a >> 32), std::uint32_t(tag)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t(words[0]) << 32) | words[1];
}

std::vector<RowMat<float>*> trainable(GlowParams<float>& p) {
  std::vector<RowMat<float>*> out;
  p.visit([&](const std::string&, RowMat<float>& m, bool t) {
    if (t) out.push_back(&m);
  });
  return out;
}

/// Resample one channel plane with exact area coverage along one axis.
std::vector<double> resample_axis(const std::vector<double>& src, int n_src, int n_dst,
                                  int stride_count, bool rows) {
  // src is (rows ? n_src x stride_count : stride_count x n_src), row-major.
  std::vector<double> dst(std::size_t(n_dst) * stride_count, 0.0);
  auto at_src = [&](int i, int j) -> double {
    return rows ? src[std::size_t(i) * stride_count + j] : src[std::size_t(j) * n_src + i];
  };
  auto at_dst = [&](int i, int j) -> double& {
    return rows ? dst[std::size_t(i) * stride_count + j] : dst[std::size_t(j) * n_dst + i];
  };
  const double ratio = double(n_src) / n_dst;
  for (int o = 0; o < n_dst; ++o) {
    if (n_dst <= n_src) {
      const double lo = o * ratio, hi = (o + 1) * ratio;
      for (int i = int(std::floor(lo)); i < int(std::ceil(hi)) && i < n_src; ++i) {
        const double wgt = std::min(hi, i + 1.0) - std::max(lo, double(i));
        if (wgt <= 0.0) continue;
        for (int j = 0; j < stride_count; ++j) at_dst(o, j) += wgt * at_src(i, j);
      }
      for (int j = 0; j < stride_count; ++j) at_dst(o, j) /= ratio;
    } else {
      const double pos = std::clamp((o + 0.5) * ratio - 0.5, 0.0, double(n_src - 1));
      const int i0 = int(std::floor(pos));
      const int i1 = std::min(i0 + 1, n_src - 1);
      const double t = pos - i0;
      for (int j = 0; j < stride_count; ++j)
        at_dst(o, j) = (1.0 - t) * at_src(i0, j) + t * at_src(i1, j);
    }
  }
  return dst;
}

}  // namespace

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  if (image_size <= 0) throw ConfigError("image size must be positive");
  if (glow.height != image_size || glow.width != image_size)
    throw ConfigError("image size " + std::to_string(image_size) +
                      " does not match the model's " + std::to_string(glow.height) + "x" +
                      std::to_string(glow.width));
  if (glow.channels != 3) throw ConfigError("training images are RGB; channels must be 3");
  glow.validate();
  if (epochs < 1 && max_steps < 1) throw ConfigError("need epochs >= 1 or max_steps >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(gradient_clip_norm > 0.0)) throw ConfigError("gradient clip norm must be positive");
  if (warmup_steps < 0 || checkpoint_every < 0 || max_steps < 0)
    throw ConfigError("step counts must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"data_dir", c.data_dir.string()},
                     {"out", c.out.string()},
                     {"image_size", c.image_size},
                     {"glow", c.glow},
                     {"epochs", c.epochs},
                     {"max_steps", c.max_steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"gradient_clip_norm", c.gradient_clip_norm},
                     {"warmup_steps", c.warmup_steps},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.data_dir = j.at("data_dir").get<std::string>();
  c.out = j.at("out").get<std::string>();
  j.at("image_size").get_to(c.image_size);
  j.at("glow").get_to(c.glow);
  j.at("epochs").get_to(c.epochs);
  c.max_steps = j.value("max_steps", 0);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("gradient_clip_norm").get_to(c.gradient_clip_norm);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("seed").get_to(c.seed);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
}

// ------------------------------------------------------------------ dataset

QuantizedImage prepare_image(const QuantizedImage& img, int size) {
  if (size <= 0) throw ConfigError("image size must be positive");
  if (img.c != 1 && img.c != 3) throw ShapeError("expected a grayscale or RGB image");
  if (img.h <= 0 || img.w <= 0) throw ShapeError("image has zero area");
  const int side = std::min(img.h, img.w);
  const int y0 = (img.h - side) / 2, x0 = (img.w - side) / 2;
  const double to8 = 255.0 / double(img.max_value());

  QuantizedImage out(3, size, size, 8);
  for (int c = 0; c < 3; ++c) {
    const int sc = img.c == 1 ? 0 : c;
    std::vector<double> plane(std::size_t(side) * side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        plane[std::size_t(y) * side + x] = img.at(sc, y0 + y, x0 + x) * to8;
    const auto tall = resample_axis(plane, side, size, side, true);   // size x side
    const auto done = resample_axis(tall, side, size, size, false);   // size x size
    for (std::size_t i = 0; i < done.size(); ++i)
      out.pixels[std::size_t(c) * size * size + i] =
          std::uint16_t(std::clamp(std::lround(done[i]), 0l, 255l));
  }
  return out;
}

Dataset ingest_dataset(const fs::path& dir, int image_size) {
  if (!fs::is_directory(dir)) throw IoError("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  Dataset data;
  for (const auto& f : files) {
    try {
      data.images.push_back(prepare_image(read_image(f), image_size));
      data.files.push_back(f);
    } catch (const Error& e) {
      ++data.skipped;
      spdlog::warn("skipping {}: {}", f.string(), e.what());
    }
  }
  if (data.images.empty())
    throw FormatError("no decodable images in " + dir.string() + " (" +
                      std::to_string(data.skipped) + " skipped)");
  return data;
}

BatchSampler::BatchSampler(std::size_t dataset_size, int batch_size, std::uint64_t seed)
    : n_(dataset_size), batch_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (dataset_size < std::size_t(batch_size))
    throw ConfigError("dataset of " + std::to_string(dataset_size) +
                      " images is smaller than one batch of " + std::to_string(batch_size));
  steps_per_epoch_ = n_ / std::size_t(batch_);
}

std::vector<std::size_t> BatchSampler::indices(std::int64_t step) const {
  const auto epoch = std::uint64_t(step) / steps_per_epoch_;
  const auto within = std::uint64_t(step) % steps_per_epoch_;
  std::vector<std::size_t> perm(n_);
  std::iota(perm.begin(), perm.end(), std::size_t(0));
  std::mt19937_64 rng(mix_seed(seed_, epoch, 1));
  std::shuffle(perm.begin(), perm.end(), rng);
  return {perm.begin() + std::ptrdiff_t(within * batch_),
          perm.begin() + std::ptrdiff_t((within + 1) * batch_)};
}

Tensor<float> make_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                         std::uint64_t seed, std::int64_t step) {
  std::mt19937_64 rng(mix_seed(seed, std::uint64_t(step), 2));
  std::vector<Tensor<float>> samples;
  samples.reserve(indices.size());
  for (auto i : indices) samples.push_back(dequantize<float>(data.images.at(i), &rng).pixels);
  return stack<float>(samples);
}

// ------------------------------------------------------------------ trainer

Trainer::Trainer(TrainConfig config, GlowModel model)
    : config_(std::move(config)),
      model_(std::move(model)),
      m_(model_.params().zeros_like()),
      v_(model_.params().zeros_like()) {}

Trainer::Trainer(TrainConfig config)
    : Trainer((config.validate(), config), GlowModel(config.glow, config.seed)) {}

Trainer Trainer::resume(const fs::path& checkpoint, std::optional<TrainConfig> config) {
  const auto file = read_checkpoint_file(checkpoint);
  auto model = model_from_checkpoint(file);
  TrainConfig cfg;
  if (config) {
    cfg = *config;
  } else {
    try {
      cfg = file.header.at("train").get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint has no training config: ") + e.what());
    }
  }
  cfg.validate();
  if (!(cfg.glow == model.config()))
    throw ConfigError("training config does not match the checkpoint's model");

  Trainer t(cfg, std::move(model));
  std::unordered_map<std::string, const WeightRecord*> by_name;
  for (const auto& r : file.records) by_name[r.name] = &r;
  auto restore = [&](GlowParams<float>& moments, const std::string& prefix) {
    moments.visit([&](const std::string& name, RowMat<float>& m, bool train) {
      if (!train) return;
      const auto it = by_name.find(prefix + name);
      if (it == by_name.end()) throw FormatError("checkpoint is missing optimizer state " + name);
      auto loaded = record_matrix(*it->second);
      if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
        throw FormatError("optimizer state " + name + " has the wrong shape");
      m = std::move(loaded);
    });
  };
  restore(t.m_, "adam.m.");
  restore(t.v_, "adam.v.");
  t.step_ = file.header.at("trainer").at("step").get<std::int64_t>();
  return t;
}

StepStats Trainer::step(const Tensor<float>& batch) {
  StepStats stats;
  GlowModel working = model_;
  if (!working.actnorm_initialized()) {
    try {
      working.initialize_actnorm(batch);
    } catch (const NumericError& e) {
      throw TrainingDiverged(std::string("actnorm initialization failed: ") + e.what());
    }
  }

  GlowParams<float> grad = working.params().zeros_like();
  try {
    stats.loss_bpd = working.loss_and_gradient(batch, grad);
  } catch (const NumericError& e) {
    throw TrainingDiverged("step " + std::to_string(step_ + 1) + ": " + e.what());
  }
  if (!std::isfinite(stats.loss_bpd))
    throw TrainingDiverged("step " + std::to_string(step_ + 1) + ": loss is not finite");

  auto g = trainable(grad);
  double sq = 0.0;
  for (auto* m : g) sq += m->cast<double>().squaredNorm();
  stats.grad_norm = std::sqrt(sq);
  if (!std::isfinite(stats.grad_norm))
    throw TrainingDiverged("step " + std::to_string(step_ + 1) + ": gradient is not finite");
  const double clip =
      stats.grad_norm > config_.gradient_clip_norm ? config_.gradient_clip_norm / stats.grad_norm
                                                   : 1.0;

  const std::int64_t t = step_ + 1;
  stats.learning_rate =
      config_.learning_rate *
      (config_.warmup_steps > 0 ? std::min(1.0, double(t) / config_.warmup_steps) : 1.0);
  const double bc1 = 1.0 - std::pow(kBeta1, double(t));
  const double bc2 = 1.0 - std::pow(kBeta2, double(t));

  auto p = trainable(working.mutable_params());
  auto m = trainable(m_);
  auto v = trainable(v_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Eigen::ArrayXXf gi = g[i]->array() * float(clip);
    m[i]->array() = float(kBeta1) * m[i]->array() + float(1.0 - kBeta1) * gi;
    v[i]->array() = float(kBeta2) * v[i]->array() + float(1.0 - kBeta2) * gi.square();
    p[i]->array() -= float(stats.learning_rate) *
                     ((m[i]->array() / float(bc1)) /
                      ((v[i]->array() / float(bc2)).sqrt() + float(kAdamEps)));
  }
  model_ = std::move(working);
  step_ = t;
  stats.step = t;
  return stats;
}

void Trainer::save(const fs::path& path) const {
  auto file = model_checkpoint(model_, nlohmann::json(config_));
  file.header["trainer"] = {{"step", step_}};
  auto add = [&](const GlowParams<float>& moments, const std::string& prefix) {
    moments.visit([&](const std::string& name, const RowMat<float>& mat, bool train) {
      if (train) file.records.push_back(make_record(prefix + name, mat));
    });
  };
  add(m_, "adam.m.");
  add(v_, "adam.v.");
  write_checkpoint_file(path, file);
}

// ------------------------------------------------------------------ driver

fs::path train_on(const Dataset& data, const TrainConfig& config, const StepCallback& on_step,
                  const BatchHook& batch_hook) {
  config.validate();
  if (config.out.empty()) throw ConfigError("training needs an output checkpoint path");
  const BatchSampler sampler(data.size(), config.batch_size, config.seed);
  const std::int64_t total = config.max_steps > 0
                                 ? config.max_steps
                                 : std::int64_t(config.epochs) * sampler.steps_per_epoch();
  Trainer trainer(config);
  spdlog::info("training {} steps on {} images ({} per batch)", total, data.size(),
               config.batch_size);
  for (std::int64_t s = 0; s < total; ++s) {
    auto batch = make_batch(data, sampler.indices(s), config.seed, s);
    if (batch_hook) batch_hook(s, batch);
    StepStats stats;
    try {
      stats = trainer.step(batch);
    } catch (const TrainingDiverged& e) {
      spdlog::error("training diverged: {}; last checkpoint kept at {}", e.what(),
                    config.out.string());
      throw;
    }
    if (on_step) on_step(stats);
    if (stats.step % 50 == 0 || stats.step == total)
      spdlog::info("step {}/{} loss {:.4f} bits/dim, grad norm {:.3g}", stats.step, total,
                   stats.loss_bpd, stats.grad_norm);
    if (config.checkpoint_every > 0 && stats.step % config.checkpoint_every == 0)
      trainer.save(config.out);
  }
  trainer.save(config.out);
  return config.out;
}

fs::path train(const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  return train_on(ingest_dataset(config.data_dir, config.image_size), config, on_step);
}

}  // namespace dfswe
