#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfswe/glow.hpp"
#include "dfswe/image.hpp"

namespace dfswe {

namespace fs = std::filesystem;

struct TrainConfig {
  fs::path data_dir;
  fs::path out;               // final checkpoint path
  int image_size = 32;
  GlowConfig glow;
  int epochs = 1;
  int max_steps = 0;          // 0: run all epochs
  int batch_size = 32;
  double learning_rate = 1e-4;
  double gradient_clip_norm = 50.0;
  int warmup_steps = 100;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;  // steps; 0 disables periodic checkpoints

  /// Throws ConfigError; runs before any data is touched.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Dataset {
  std::vector<QuantizedImage> images;  // 8-bit, 3 x size x size
  std::vector<fs::path> files;
  int skipped = 0;

  std::size_t size() const { return images.size(); }
};

/// Center-crop to a square, resize to `size` (area average when shrinking,
/// bilinear when growing) and replicate grayscale to RGB. Output depth is 8.
QuantizedImage prepare_image(const QuantizedImage& img, int size);

/// Loads every regular file of `dir` in lexicographic order. Undecodable
/// files are skipped with a warning and counted.
Dataset ingest_dataset(const fs::path& dir, int image_size);

/// Deterministic batch order: epoch e uses a permutation seeded by
/// (seed, e); the final partial batch of an epoch is dropped.
class BatchSampler {
public:
  BatchSampler(std::size_t dataset_size, int batch_size, std::uint64_t seed);
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  /// Dataset indices of global step `step`.
  std::vector<std::size_t> indices(std::int64_t step) const;

private:
  std::size_t n_;
  int batch_;
  std::uint64_t seed_;
  std::size_t steps_per_epoch_;
};

/// Dequantized training batch with noise seeded by (seed, step).
Tensor<float> make_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                         std::uint64_t seed, std::int64_t step);

struct StepStats {
  std::int64_t step = 0;  // 1-based index of the update just applied
  double loss_bpd = 0.0;  // loss before the update
  double grad_norm = 0.0;
  double learning_rate = 0.0;
};

/// Adam with linear warmup and global-norm clipping.
class Trainer {
public:
  explicit Trainer(TrainConfig config);
  /// Resume from a checkpoint written by save(); restores the model, the
  /// moment estimates and the step counter.
  static Trainer resume(const fs::path& checkpoint, std::optional<TrainConfig> config = {});

  const TrainConfig& config() const { return config_; }
  const GlowModel& model() const { return model_; }
  std::int64_t steps_done() const { return step_; }

  /// One update on `batch`. Initializes actnorm on the first batch.
  /// Throws TrainingDiverged on a non-finite loss or gradient, leaving the
  /// parameters untouched.
  StepStats step(const Tensor<float>& batch);

  void save(const fs::path& path) const;

private:
  Trainer(TrainConfig config, GlowModel model);

  TrainConfig config_;
  GlowModel model_;
  GlowParams<float> m_, v_;
  std::int64_t step_ = 0;
};

using StepCallback = std::function<void(const StepStats&)>;
/// Sees every batch (0-based step) before the update; used for fault injection.
using BatchHook = std::function<void(std::int64_t, Tensor<float>&)>;

/// Full training run on config.data_dir. Writes periodic checkpoints to
/// config.out and returns its path. On divergence the last good checkpoint
/// on disk is left intact and TrainingDiverged propagates.
fs::path train(const TrainConfig& config, const StepCallback& on_step = {});

/// Same loop on an already loaded dataset.
fs::path train_on(const Dataset& data, const TrainConfig& config,
                  const StepCallback& on_step = {}, const BatchHook& batch_hook = {});

}  // namespace dfswe
