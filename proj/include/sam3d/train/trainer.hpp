#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "sam3d/decoder/decoder.hpp"
#include "sam3d/encoder/encoder.hpp"
#include "sam3d/io/augment.hpp"
#include "sam3d/io/manifest.hpp"
#include "sam3d/io/volume_ops.hpp"
#include "sam3d/objective/loss.hpp"
#include "sam3d/train/checkpoint.hpp"
#include "sam3d/train/optim.hpp"

namespace sam3d {

struct TrainConfig {
  double init_lr = 1e-2;
  double power = 0.9;
  std::size_t max_epoch = 1000;
  std::size_t iters_per_epoch = 250;
  SgdConfig sgd;
  std::size_t batch_size = 2;
  Extent3 patch_size{0, 0, 0};  // all zero: take the manifest's patch size
  std::uint64_t seed = 0;
  LossConfig loss;
  AugmentConfig augment;
  NormalizeConfig normalize;
  double foreground_probability = 0.33;
  std::size_t checkpoint_every = 50;  // epochs; 0 disables periodic checkpoints

  void validate() const;
  nlohmann::json to_json() const;
  /// Covers every field that shapes the optimization trajectory.
  std::string digest() const;
};

struct TrainOptions {
  std::filesystem::path cache_dir;  // empty: <out_dir>/cache
  std::size_t prefetch = 0;         // queue depth of the sampling thread; 0 runs inline
  std::filesystem::path resume_from;
  std::size_t stop_after_epoch = 0;  // 0: run to max_epoch
};

struct IterationRecord {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
  double dice = 0.0;
  double ce = 0.0;
};

struct TrainResult {
  std::vector<IterationRecord> iterations;
  std::vector<double> epoch_mean_loss;
  TrainingState state;
};

/// Trains on the manifest's "train" split. Writes <out_dir>/train_log.jsonl,
/// <out_dir>/checkpoint_latest and, when max_epoch is reached,
/// <out_dir>/checkpoint_final. A non-finite loss writes
/// <out_dir>/checkpoint_crash and throws NumericError.
TrainResult run_training(const DatasetManifest& manifest, const SliceEncoder& encoder, const DecoderConfig& dec_cfg,
                         const TrainConfig& cfg, const std::filesystem::path& out_dir, const TrainOptions& opts = {});

TrainResult run_training(const DatasetManifest& manifest, const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
                         const TrainConfig& cfg, const std::filesystem::path& out_dir, const TrainOptions& opts = {});

}  // namespace sam3d
