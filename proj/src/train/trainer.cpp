#include "sam3d/train/trainer.hpp"

#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include <spdlog/spdlog.h>

#include "sam3d/core/digest.hpp"
#include "sam3d/core/error.hpp"
#include "sam3d/core/rng.hpp"
#include "sam3d/encoder/embedding_cache.hpp"
#include "sam3d/io/nifti.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sam3d {

void TrainConfig::validate() const {
  if (!(init_lr > 0.0)) throw ValidationError("train: init_lr must be > 0");
  if (!(power > 0.0)) throw ValidationError("train: power must be > 0");
  if (max_epoch == 0) throw ValidationError("train: max_epoch must be >= 1");
  if (iters_per_epoch == 0) throw ValidationError("train: iters_per_epoch must be >= 1");
  if (batch_size == 0) throw ValidationError("train: batch_size must be >= 1");
  if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) throw ValidationError("train: momentum must be in [0, 1)");
  if (!(sgd.weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
  if (!(foreground_probability >= 0.0 && foreground_probability <= 1.0)) {
    throw ValidationError("train: foreground_probability must be in [0, 1]");
  }
  loss.validate();
}

json TrainConfig::to_json() const {
  const AugmentConfig& a = augment;
  return {{"init_lr", init_lr},
          {"power", power},
          {"max_epoch", max_epoch},
          {"iters_per_epoch", iters_per_epoch},
          {"momentum", sgd.momentum},
          {"weight_decay", sgd.weight_decay},
          {"nesterov", sgd.nesterov},
          {"batch_size", batch_size},
          {"patch_size", patch_size},
          {"seed", seed},
          {"loss",
           {{"num_classes", loss.num_classes},
            {"epsilon", loss.epsilon},
            {"include_background", loss.include_background},
            {"ds_weights", loss.ds_weights}}},
          {"augment",
           {{"p_rotation", a.p_rotation},
            {"max_rotation_deg", a.max_rotation_deg},
            {"p_scale", a.p_scale},
            {"scale_min", a.scale_min},
            {"scale_max", a.scale_max},
            {"p_brightness", a.p_brightness},
            {"brightness_min", a.brightness_min},
            {"brightness_max", a.brightness_max},
            {"p_gamma", a.p_gamma},
            {"gamma_min", a.gamma_min},
            {"gamma_max", a.gamma_max},
            {"p_mirror", a.p_mirror}}},
          {"normalize",
           {{"scheme", normalize.scheme == NormScheme::kZScore ? "zscore" : "clip_zscore"},
            {"p_low", normalize.p_low},
            {"p_high", normalize.p_high}}},
          {"foreground_probability", foreground_probability},
          {"checkpoint_every", checkpoint_every}};
}

std::string TrainConfig::digest() const {
  json j = to_json();
  j.erase("checkpoint_every");
  return sha256_hex(j.dump());
}

namespace {

struct TrainingCase {
  std::string case_id;
  Volume image;
  LabelVolume labels;
};

struct Sample {
  EmbeddingVolume embedding;
  Tensor<std::uint8_t> labels;
};

/// Bounded single-producer queue; the producer's exception is rethrown on pop.
class SampleQueue {
 public:
  explicit SampleQueue(std::size_t depth) : depth_(depth) {}

  void push(Sample s) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return items_.size() < depth_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(s));
    cv_.notify_all();
  }
  void fail(std::exception_ptr e) {
    std::lock_guard lock(mu_);
    error_ = e;
    cv_.notify_all();
  }
  Sample pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !items_.empty() || error_; });
    if (items_.empty()) std::rethrow_exception(error_);
    Sample s = std::move(items_.front());
    items_.pop_front();
    cv_.notify_all();
    return s;
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }
  bool closed() {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  std::size_t depth_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Sample> items_;
  std::exception_ptr error_;
  bool closed_ = false;
};

class SampleSource {
 public:
  SampleSource(const std::vector<TrainingCase>& cases, const SliceEncoder& encoder, EmbeddingCache& cache,
               const TrainConfig& cfg, const Extent3& patch)
      : cases_(cases), encoder_(encoder), cache_(cache), cfg_(cfg), patch_(patch) {}

  /// Sample `b` of global iteration `iter`; a pure function of (seed, iter, b).
  Sample make(std::size_t iter, std::size_t b) const {
    Rng rng(Rng::derive(cfg_.seed, {iter, b}));
    const TrainingCase& c = cases_[rng.below(cases_.size())];
    const bool fg = rng.bernoulli(cfg_.foreground_probability);
    const std::uint64_t patch_seed = rng.next();
    const std::uint64_t aug_seed = rng.next();
    const TrainingPatch p = sample_training_patch(c.image, c.labels, patch_, fg, patch_seed);
    Augmented a = apply_augmentations(p.image, p.labels, cfg_.augment, aug_seed);
    Sample s;
    s.embedding = a.changed ? encode_volume(a.image, encoder_) : cache_.get_or_compute(c.case_id, a.image, encoder_);
    s.labels = std::move(a.labels.labels);
    return s;
  }

 private:
  const std::vector<TrainingCase>& cases_;
  const SliceEncoder& encoder_;
  EmbeddingCache& cache_;
  const TrainConfig& cfg_;
  Extent3 patch_;
};

std::vector<TrainingCase> load_cases(const DatasetManifest& manifest, const NormalizeConfig& norm) {
  std::vector<TrainingCase> out;
  for (const CaseEntry& e : manifest.cases_in("train")) {
    NiftiImage img = read_nifti(e.image);
    LabelVolume lab = read_nifti_labels(e.label, manifest.num_classes);
    if (img.volume.modalities() != static_cast<std::size_t>(e.modality_count)) {
      throw ValidationError("case " + e.case_id + ": image has " + std::to_string(img.volume.modalities()) +
                            " modalities, manifest says " + std::to_string(e.modality_count));
    }
    if (img.volume.extent() != lab.extent()) {
      throw ShapeError("case " + e.case_id + ": image " + extent_str(img.volume.extent()) + " vs label " +
                       extent_str(lab.extent()));
    }
    out.push_back({e.case_id, normalize_intensity(img.volume, norm), std::move(lab)});
  }
  if (out.empty()) throw ValidationError("manifest has no cases in the train split");
  return out;
}

json record_json(const IterationRecord& r) {
  return {{"epoch", r.epoch}, {"iter", r.iteration}, {"lr", r.lr}, {"loss", r.loss}, {"dice_term", r.dice},
          {"ce_term", r.ce}};
}

}  // namespace

TrainResult run_training(const DatasetManifest& manifest, const SliceEncoder& encoder, const DecoderConfig& dec_cfg,
                         const TrainConfig& cfg, const fs::path& out_dir, const TrainOptions& opts) {
  manifest.validate();
  cfg.validate();
  dec_cfg.validate();
  if (dec_cfg.num_classes != static_cast<std::size_t>(manifest.num_classes) ||
      cfg.loss.num_classes != dec_cfg.num_classes) {
    throw ValidationError("num_classes disagrees between manifest, decoder and loss configs");
  }
  const Extent3 patch = cfg.patch_size == Extent3{0, 0, 0} ? manifest.patch_size : cfg.patch_size;
  if (patch[1] % kPatchStride || patch[2] % kPatchStride) {
    throw ValidationError("patch in-plane size must be a multiple of 16, got " + extent_str(patch));
  }

  fs::create_directories(out_dir);
  const std::vector<TrainingCase> cases = load_cases(manifest, cfg.normalize);
  const std::size_t modalities = cases.front().image.modalities();
  if (dec_cfg.in_channels != kEmbedDim * modalities) {
    throw ShapeError("decoder in_channels " + std::to_string(dec_cfg.in_channels) + " does not match " +
                     std::to_string(modalities) + " modalities");
  }

  const CheckpointDigests live{dec_cfg.digest(), encoder.digest(), cfg.digest()};
  const json configs = {{"decoder", dec_cfg.to_json()}, {"train", cfg.to_json()}};

  std::optional<TrainingState> resumed;
  if (!opts.resume_from.empty()) {
    resumed = load_checkpoint(opts.resume_from);
    require_matching_digests(resumed->digests, live);
  }
  TrainingState state = resumed ? std::move(*resumed)
                                : TrainingState{Decoder<float>::initialized(dec_cfg, Rng::derive(cfg.seed, {0xdec0de})),
                                                {}, 0, 0, live, configs};
  if (!resumed) state.optimizer = SgdState<float>::zeros_like(state.decoder.params());
  state.digests = live;
  state.configs = configs;

  EmbeddingCache cache(opts.cache_dir.empty() ? out_dir / "cache" : opts.cache_dir);
  const SampleSource source(cases, encoder, cache, cfg, patch);

  std::ofstream log(out_dir / "train_log.jsonl", resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open training log in " + out_dir.string());

  const std::size_t end_epoch =
      opts.stop_after_epoch ? std::min(opts.stop_after_epoch, cfg.max_epoch) : cfg.max_epoch;
  const std::size_t first_iter = state.iteration;
  const std::size_t total_iters = end_epoch > state.epoch ? (end_epoch - state.epoch) * cfg.iters_per_epoch : 0;

  SampleQueue queue(std::max<std::size_t>(opts.prefetch, 1));
  std::thread producer;
  if (opts.prefetch > 0) {
    producer = std::thread([&] {
      try {
        for (std::size_t i = 0; i < total_iters && !queue.closed(); ++i) {
          for (std::size_t b = 0; b < cfg.batch_size; ++b) queue.push(source.make(first_iter + i, b));
        }
      } catch (...) {
        queue.fail(std::current_exception());
      }
    });
  }
  struct Joiner {
    SampleQueue& q;
    std::thread& t;
    ~Joiner() {
      q.close();
      if (t.joinable()) t.join();
    }
  } joiner{queue, producer};

  std::vector<IterationRecord> records;
  std::vector<double> epoch_means;
  Decoder<float>& dec = state.decoder;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

  for (std::size_t epoch = state.epoch; epoch < end_epoch; ++epoch) {
    const double lr = poly_learning_rate(epoch, cfg.max_epoch, cfg.init_lr, cfg.power);
    double epoch_sum = 0.0;
    for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it) {
      const std::size_t iter = state.iteration;
      dec.params().zero_grad();
      LossTerms terms;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const Sample s = opts.prefetch > 0 ? queue.pop() : source.make(iter, b);
        DecoderTape<float> tape;
        const DecoderOutputs<float> out = dec.forward(s.embedding, &tape);
        std::array<Tensor<float>, kNumStages> grads;
        const LossTerms t = deep_supervision_loss(out, s.labels, cfg.loss, &grads, inv_batch);
        terms.total += t.total * inv_batch;
        terms.dice += t.dice * inv_batch;
        terms.ce += t.ce * inv_batch;
        if (!std::isfinite(t.total)) break;
        dec.backward(tape, grads);
      }
      auto write_crash = [&] {
        state.epoch = epoch;
        try {
          save_checkpoint(out_dir / "checkpoint_crash", state);
        } catch (const std::exception& e) {
          spdlog::error("could not write crash checkpoint: {}", e.what());
        }
      };
      if (!std::isfinite(terms.total)) {
        write_crash();
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                           std::to_string(iter) + "; crash checkpoint in " + (out_dir / "checkpoint_crash").string());
      }
      try {
        sgd_update(dec.params(), state.optimizer, lr, cfg.sgd);
      } catch (const NumericError& e) {
        write_crash();
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", iteration " +
                           std::to_string(iter) + "; crash checkpoint in " + (out_dir / "checkpoint_crash").string());
      }
      state.iteration = iter + 1;

      const IterationRecord rec{epoch, iter, lr, terms.total, terms.dice, terms.ce};
      records.push_back(rec);
      log << record_json(rec).dump() << "\n";
      epoch_sum += terms.total;
    }
    const double mean = epoch_sum / static_cast<double>(cfg.iters_per_epoch);
    epoch_means.push_back(mean);
    log << json{{"epoch", epoch}, {"lr", lr}, {"epoch_mean_loss", mean}}.dump() << "\n";
    log.flush();
    spdlog::info("epoch {} lr {:.6g} mean loss {:.6f}", epoch, lr, mean);

    state.epoch = epoch + 1;
    if (cfg.checkpoint_every && state.epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(out_dir / "checkpoint_latest", state);
    }
  }

  save_checkpoint(out_dir / "checkpoint_latest", state);
  if (state.epoch >= cfg.max_epoch) save_checkpoint(out_dir / "checkpoint_final", state);
  spdlog::info("embedding cache: {} hits, {} misses", cache.hits(), cache.misses());
  return TrainResult{std::move(records), std::move(epoch_means), std::move(state)};
}

TrainResult run_training(const DatasetManifest& manifest, const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
                         const TrainConfig& cfg, const fs::path& out_dir, const TrainOptions& opts) {
  const auto encoder = make_encoder(enc_cfg);
  return run_training(manifest, *encoder, dec_cfg, cfg, out_dir, opts);
}

}  // namespace sam3d
