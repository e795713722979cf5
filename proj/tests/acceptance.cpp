// Acceptance driver: one line per criterion, exit status 1 if any fails.
//
//   sam3d_acceptance [--keep]
//
// Work files go to a fresh temp directory (kept with --keep).

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "sam3d/app/toy_dataset.hpp"
#include "sam3d/core/rng.hpp"
#include "sam3d/decoder/decoder.hpp"
#include "sam3d/encoder/encoder.hpp"
#include "sam3d/infer/inference.hpp"
#include "sam3d/io/nifti.hpp"
#include "sam3d/io/rvf.hpp"
#include "sam3d/io/volume_ops.hpp"
#include "sam3d/kernels/kernels.hpp"
#include "sam3d/metrics/metrics.hpp"
#include "sam3d/objective/loss.hpp"
#include "sam3d/train/gradcheck.hpp"
#include "sam3d/train/optim.hpp"
#include "sam3d/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace sam3d;

namespace {

// Pinned tolerances and budgets.
constexpr double kCountLo1 = 1.82e6, kCountHi1 = 1.94e6;
constexpr double kCountLo4 = 4.49e6, kCountHi4 = 4.77e6;
constexpr double kCountSeconds = 1.0;
constexpr int kShapeTrials = 24;
constexpr double kShapeSeconds = 60.0;
constexpr std::uint64_t kToySeed = 20240607;
constexpr std::size_t kToyIterations = 200;
constexpr double kToyDsc = 0.95;
constexpr double kToySeconds = 600.0;
constexpr std::size_t kAuditParamLimit = 10000;
constexpr double kAuditTol = 1e-3;
constexpr double kAuditFaultMin = 1e-1;
constexpr double kAuditSeconds = 120.0;
constexpr double kDiceTol = 1e-3;
constexpr double kCeTol = 1e-9;
constexpr double kPerfectLoss = 1e-4;
constexpr int kMetricPairs = 100;
constexpr double kHdTol = 1e-6;
constexpr double kMetricSeconds = 120.0;
constexpr double kLrTol = 1e-7;
constexpr std::size_t kReproIterations = 10;
constexpr double kProbTol = 1e-5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++g_failures;
  std::printf("[%s] %2d %-28s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string strf(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string strf(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

Mask random_mask(const Extent3& e, Rng& rng) {
  Mask m({e[0], e[1], e[2]});
  if (rng.bernoulli(0.5)) {
    const double p = rng.uniform(0.005, 0.4);
    for (auto& v : m.vec()) v = rng.bernoulli(p) ? 1 : 0;
    return m;
  }
  const double cz = rng.uniform(0, e[0]), cy = rng.uniform(0, e[1]), cx = rng.uniform(0, e[2]);
  const double r = rng.uniform(0.8, 7.0);
  for (std::size_t d = 0; d < e[0]; ++d)
    for (std::size_t h = 0; h < e[1]; ++h)
      for (std::size_t w = 0; w < e[2]; ++w) m.at(d, h, w) = std::hypot(d - cz, h - cy, w - cx) < r ? 1 : 0;
  return m;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

TrainConfig toy_train_config(std::size_t max_epoch, std::size_t iters) {
  TrainConfig c;
  c.max_epoch = max_epoch;
  c.iters_per_epoch = iters;
  c.batch_size = 2;
  c.seed = kToySeed;
  c.loss.num_classes = 3;
  c.augment = AugmentConfig::disabled();
  c.checkpoint_every = 0;
  return c;
}

std::vector<double> losses(const TrainResult& r) {
  std::vector<double> v;
  for (const auto& it : r.iterations) v.push_back(it.loss);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const bool keep = argc > 1 && std::strcmp(argv[1], "--keep") == 0;
  spdlog::set_level(spdlog::level::warn);
  kernels::set_num_threads(1);
  std::random_device rd;
  const fs::path work = fs::temp_directory_path() / ("sam3d_acceptance_" + std::to_string(rd()));
  fs::create_directories(work);
  std::printf("isa %s, work dir %s\n", std::string(kernels::isa_name(kernels::active_isa())).c_str(),
              work.string().c_str());

  report(1, "parameter counts", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const DecoderConfig syn = DecoderConfig::for_modalities(1, 9);
    const DecoderConfig bra = DecoderConfig::for_modalities(4, 4);
    const std::size_t c1 = count_parameters(syn).total, c4 = count_parameters(bra).total;
    const std::size_t a1 = Decoder<float>(syn).params().element_count();
    const std::size_t a4 = Decoder<float>(bra).params().element_count();
    const double t = seconds_since(t0);
    const bool ok = c1 >= kCountLo1 && c1 <= kCountHi1 && c4 >= kCountLo4 && c4 <= kCountHi4 && a1 == c1 &&
                    a4 == c4 && t < kCountSeconds;
    return Outcome{ok, strf("M=1,N=9: %zu (alloc %zu); M=4,N=4: %zu (alloc %zu); %.3fs < %.0fs", c1, a1, c4, a4, t,
                           kCountSeconds)};
  });

  report(2, "shape law", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto enc = make_encoder(EncoderConfig{});
    Rng rng(7);
    int good = 0;
    std::string first_bad;
    for (int trial = 0; trial < kShapeTrials; ++trial) {
      const std::size_t m = 1 + rng.below(trial % 6 == 0 ? 4 : 2);
      const std::size_t n = 2 + rng.below(8);
      const std::size_t d = 1 + rng.below(4);
      const std::size_t h = 16 * (1 + rng.below(4)), w = 16 * (1 + rng.below(4));
      Volume vol;
      vol.data = Tensor<float>({m, d, h, w});
      for (auto& v : vol.data.vec()) v = static_cast<float>(rng.normal());
      const Decoder<float> dec = Decoder<float>::initialized(DecoderConfig::for_modalities(m, n), trial);
      const DecoderOutputs<float> out = dec.forward(encode_volume(vol, *enc));
      const bool ok = out.logits[0].shape() == Shape{n, d, h, w} && out.logits[1].shape() == Shape{n, d, h / 2, w / 2} &&
                      out.logits[2].shape() == Shape{n, d, h / 4, w / 4};
      if (ok) {
        ++good;
      } else if (first_bad.empty()) {
        first_bad = strf(" first mismatch M=%zu D=%zu H=%zu W=%zu", m, d, h, w);
      }
    }
    const double t = seconds_since(t0);
    return Outcome{good == kShapeTrials && t < kShapeSeconds,
                   strf("%d/%d random (M,D,H,W) trials%s; %.1fs < %.0fs", good, kShapeTrials, first_bad.c_str(), t,
                       kShapeSeconds)};
  });

  // Criteria 3 and 8 share one toy run.
  std::optional<TrainResult> toy_opt;
  bool toy_trained = false;
  Tensor<float> probe_in, probe_before, probe_after;
  std::string optimizer_detail;
  bool optimizer_ok = false;
  DatasetManifest toy_manifest;

  report(3, "toy overfit", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    toy_manifest = generate_toy_dataset(work / "toy", 4, {8, 64, 64}, 3, kToySeed);
    EncoderConfig enc_cfg;
    const auto enc = make_encoder(enc_cfg);
    Volume probe;
    probe.data = Tensor<float>({1, 3, 32, 48});
    Rng rng(99);
    for (auto& v : probe.data.vec()) v = static_cast<float>(rng.normal());
    probe_in = split_into_slices(probe, 0);
    probe_before = enc->encode_slices(probe_in);

    const DecoderConfig dec_cfg = DecoderConfig::for_modalities(1, 3);
    const TrainConfig cfg = toy_train_config(8, 25);
    toy_opt.emplace(run_training(toy_manifest, *enc, dec_cfg, cfg, work / "toy_run"));
    const TrainResult& toy_result = *toy_opt;
    toy_trained = true;
    probe_after = enc->encode_slices(probe_in);

    const auto& params = toy_result.state.decoder.params();
    std::set<std::string> names;
    for (const auto& p : params) names.insert(p.name);
    const Decoder<float> fresh(dec_cfg);
    std::set<std::string> decoder_names;
    for (const auto& p : fresh.params()) decoder_names.insert(p.name);
    std::size_t velocity_elems = 0;
    bool aligned = toy_result.state.optimizer.velocity.size() == params.size();
    for (std::size_t i = 0; aligned && i < params.size(); ++i) {
      aligned = toy_result.state.optimizer.velocity[i].shape() == params[i].value.shape();
      velocity_elems += toy_result.state.optimizer.velocity[i].size();
    }
    const TrainingState saved = load_checkpoint(work / "toy_run" / "checkpoint_final");
    std::size_t saved_elems = 0;
    for (const auto& v : saved.optimizer.velocity) saved_elems += v.size();
    optimizer_ok = aligned && names == decoder_names && velocity_elems == count_parameters(dec_cfg).total &&
                   saved_elems == velocity_elems;
    optimizer_detail = strf("optimizer state: %zu tensors / %zu values, all decoder-named (encoder has %zu params)",
                           toy_result.state.optimizer.velocity.size(), velocity_elems, enc->parameter_count());

    const Decoder<float>& dec = toy_result.state.decoder;
    const InferenceConfig inf{{8, 64, 64}, 0.5};
    double sum = 0.0;
    std::size_t count = 0;
    std::string per_case;
    for (const CaseEntry& c : toy_manifest.cases) {
      const NiftiImage img = read_nifti(c.image);
      const LabelVolume gt = read_nifti_labels(c.label, 3);
      const Volume vol = normalize_intensity(img.volume, cfg.normalize);
      const LabelVolume pred = argmax_segmentation(sliding_window_predict(vol, *enc, dec, inf));
      const CaseMetrics m = evaluate_volume(pred, gt, img.volume.spacing, 3);
      for (const auto& cm : m.per_class) {
        sum += cm.dsc;
        ++count;
      }
      per_case += strf(" %.3f", m.mean_dsc);
    }
    const double mean = sum / static_cast<double>(count);
    const double t = seconds_since(t0);
    const std::size_t iters = toy_result.iterations.size();
    return Outcome{mean >= kToyDsc && iters <= kToyIterations && t < kToySeconds,
                   strf("mean foreground DSC %.4f >= %.2f (cases%s) after %zu iterations, final loss %.4f; %.0fs < %.0fs",
                       mean, kToyDsc, per_case.c_str(), iters, toy_result.iterations.back().loss, t, kToySeconds)};
  });

  report(4, "gradient audit", [] {
    const auto t0 = std::chrono::steady_clock::now();
    DecoderConfig cfg;
    cfg.in_channels = 12;
    cfg.block_channels = {8, 6, 4, 2};
    cfg.num_classes = 2;
    const std::size_t n = count_parameters(cfg).total;
    const GradCheckReport ok = finite_difference_gradient_check(cfg, LossConfig{}, 1, {2, 2, 2});
    GradCheckOptions fault;
    fault.inject_fault = true;
    const GradCheckReport bad = finite_difference_gradient_check(cfg, LossConfig{}, 1, {2, 2, 2}, fault);
    const double t = seconds_since(t0);
    const bool pass = n <= kAuditParamLimit && ok.passed(kAuditTol) && bad.max_rel_error > kAuditFaultMin &&
                      ok.checked > 0 && ok.kinks * 20 < ok.checked && t < kAuditSeconds;
    return Outcome{pass, strf("%zu params, max rel err %.2e < %.0e over %zu entries (%zu kink-straddling skipped); "
                             "fault injection %.2e > %.0e; %.0fs < %.0fs",
                             n, ok.max_rel_error, kAuditTol, ok.checked, ok.kinks, bad.max_rel_error, kAuditFaultMin,
                             t, kAuditSeconds)};
  });

  report(5, "loss exactness", [] {
    const Tensor<double> logits({2, 1, 1, 1});
    const Tensor<std::uint8_t> label({1, 1, 1}, 1);
    const double dice = soft_dice_loss(logits, label, 1e-5);
    const double ce = cross_entropy_loss(logits, label);
    const auto w = deep_supervision_weights(3);
    const bool weights_exact = w.size() == 3 && w[0] == 4.0 / 7.0 && w[1] == 2.0 / 7.0 && w[2] == 1.0 / 7.0;

    Tensor<std::uint8_t> labels({2, 8, 8});
    Rng rng(5);
    for (auto& v : labels.vec()) v = static_cast<std::uint8_t>(rng.below(3));
    LossConfig cfg;
    cfg.num_classes = 3;
    DecoderOutputs<double> out;
    for (std::size_t s = 0; s < kNumStages; ++s) {
      const std::size_t f = std::size_t{1} << s;
      const LabelVolume ds = downsample_label_volume({labels, 3}, {1, f, f});
      out.logits[s] = Tensor<double>({3, 2, 8 / f, 8 / f});
      const std::size_t v = ds.labels.size();
      for (std::size_t i = 0; i < v; ++i) out.logits[s][ds.labels[i] * v + i] = 30.0;
    }
    const double perfect = deep_supervision_loss(out, labels, cfg).total;
    const bool pass = std::abs(dice - 0.6) <= kDiceTol && std::abs(ce - std::log(2.0)) <= kCeTol && weights_exact &&
                      perfect < kPerfectLoss;
    return Outcome{pass, strf("dice %.6f (0.6 +- %.0e), CE %.12f (ln2 +- %.0e), weights %s (4/7,2/7,1/7), "
                             "perfect total %.2e < %.0e",
                             dice, kDiceTol, ce, kCeTol, weights_exact ? "exact" : "inexact", perfect, kPerfectLoss)};
  });

  report(6, "metric oracle", [] {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(31337);
    double worst = 0.0;
    int compared = 0, agree = 0;
    bool dsc_ok = true;
    for (int i = 0; i < kMetricPairs; ++i) {
      const Extent3 e{1 + rng.below(16), 1 + rng.below(16), 1 + rng.below(16)};
      const Spacing3 sp{rng.uniform(0.5, 3.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
      const Mask a = random_mask(e, rng), b = random_mask(e, rng);
      const auto fast = hd95(a, b, sp);
      const auto slow = hd95_bruteforce(a, b, sp);
      if (fast.has_value() == slow.has_value()) {
        ++agree;
        if (fast) {
          worst = std::max(worst, std::abs(*fast - *slow));
          ++compared;
        }
      }
      dsc_ok = dsc_ok && dice_coefficient(a, b) == dice_coefficient(b, a);
      Mask nonempty = a;
      nonempty[0] = 1;
      dsc_ok = dsc_ok && dice_coefficient(nonempty, nonempty) == 1.0;
      Mask inverse = nonempty;
      for (auto& v : inverse.vec()) v = v ? 0 : 1;
      if (std::any_of(inverse.vec().begin(), inverse.vec().end(), [](auto v) { return v != 0; })) {
        dsc_ok = dsc_ok && dice_coefficient(nonempty, inverse) == 0.0;
      }
    }
    Mask p({1, 4, 5}), q({1, 4, 5});
    p.at(0, 0, 0) = 1;
    q.at(0, 3, 4) = 1;
    const double five = hd95(p, q, {1.0, 1.0, 1.0}).value();
    const double t = seconds_since(t0);
    const bool pass = agree == kMetricPairs && worst <= kHdTol && dsc_ok && five == 5.0 && t < kMetricSeconds;
    return Outcome{pass, strf("%d pairs (%d with defined HD95), max |fast-brute| %.1e <= %.0e; DSC symmetric/identity/"
                             "disjoint %s; single-voxel HD95 %.17g; %.1fs",
                             kMetricPairs, compared, worst, kHdTol, dsc_ok ? "ok" : "broken", five, t)};
  });

  report(7, "schedule exactness", [] {
    const double a = poly_learning_rate(0, 1000), b = poly_learning_rate(1000, 1000), c = poly_learning_rate(500, 1000);
    const bool pass = a == 1e-2 && b == 0.0 && std::abs(c - 5.3589e-3) <= kLrTol;
    return Outcome{pass, strf("lr(0)=%.17g, lr(1000)=%.17g, lr(500)=%.10e (5.3589e-3 +- %.0e)", a, b, c, kLrTol)};
  });

  report(8, "frozen encoder", [&] {
    if (!toy_trained) return Outcome{false, "toy run did not complete"};
    const bool same = same_bits(probe_before, probe_after);
    return Outcome{same && optimizer_ok,
                   strf("probe embeddings %s before/after training; %s", same ? "bitwise identical" : "CHANGED",
                       optimizer_detail.c_str())};
  });

  report(9, "reproducibility", [&] {
    const DatasetManifest m = generate_toy_dataset(work / "repro", 2, {8, 64, 64}, 3, kToySeed + 1);
    const auto enc = make_encoder(EncoderConfig{});
    const DecoderConfig dec = DecoderConfig::for_modalities(1, 3);
    const TrainConfig cfg = toy_train_config(2, kReproIterations / 2);
    TrainOptions opts;
    opts.cache_dir = work / "repro_cache";
    const TrainResult a = run_training(m, *enc, dec, cfg, work / "repro_a", opts);
    const TrainResult b = run_training(m, *enc, dec, cfg, work / "repro_b", opts);
    TrainOptions first = opts;
    first.stop_after_epoch = 1;
    const TrainResult head = run_training(m, *enc, dec, cfg, work / "repro_c", first);
    TrainOptions rest = opts;
    rest.resume_from = work / "repro_c" / "checkpoint_latest";
    const TrainResult tail = run_training(m, *enc, dec, cfg, work / "repro_c", rest);

    std::vector<double> joined = losses(head);
    for (double l : losses(tail)) joined.push_back(l);
    bool params_equal = true;
    for (std::size_t i = 0; i < a.state.decoder.params().size(); ++i) {
      params_equal = params_equal && same_bits(a.state.decoder.params()[i].value, tail.state.decoder.params()[i].value) &&
                     same_bits(a.state.optimizer.velocity[i], tail.state.optimizer.velocity[i]);
    }
    const bool first_ten = losses(a).size() == kReproIterations && losses(a) == losses(b);
    const bool resumed = joined == losses(a) && params_equal;
    return Outcome{first_ten && resumed,
                   strf("first %zu losses %s across two runs; resume after epoch 1 %s (losses, params, velocities)",
                       kReproIterations, first_ten ? "identical" : "DIFFER", resumed ? "matches element-wise" : "DIVERGES")};
  });

  report(10, "io integrity", [&] {
    const fs::path dir = work / "io";
    fs::create_directories(dir);
    bool nifti_ok = true;
    int files = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const ToyCase c = generate_toy_case({5, 32, 48}, 4, seed);
      for (const char* ext : {".nii", ".nii.gz"}) {
        const fs::path ip = dir / ("img" + std::to_string(seed) + ext);
        const fs::path lp = dir / ("lab" + std::to_string(seed) + ext);
        write_nifti(ip, c.image);
        write_nifti_labels(lp, c.labels, c.image.spacing, c.image.origin);
        const NiftiImage back = read_nifti(ip);
        nifti_ok = nifti_ok && same_bits(back.volume.data, c.image.data) && back.volume.spacing == c.image.spacing &&
                   read_nifti_labels(lp, 4).labels == c.labels.labels;
        files += 2;
      }
    }
    bool rvf_ok = true;
    Rng rng(3);
    Tensor<float> f({3, 5, 7});
    for (auto& v : f.vec()) v = static_cast<float>(rng.normal(0.0, 1e4));
    Tensor<double> d({4, 9});
    for (auto& v : d.vec()) v = rng.normal();
    Tensor<std::uint8_t> u({17});
    for (auto& v : u.vec()) v = static_cast<std::uint8_t>(rng.below(256));
    rvf_write(dir / "f.rvf", f);
    rvf_write(dir / "d.rvf", d);
    rvf_write(dir / "u.rvf", u);
    rvf_ok = same_bits(rvf_read_as<float>(dir / "f.rvf"), f) && rvf_read_as<double>(dir / "d.rvf") == d &&
             rvf_read_as<std::uint8_t>(dir / "u.rvf") == u;

    // Fusion check on overlapping windows with the trained toy decoder when available.
    const Decoder<float> dec = toy_trained ? toy_opt->state.decoder
                                           : Decoder<float>::initialized(DecoderConfig::for_modalities(1, 3), 1);
    const auto enc = make_encoder(EncoderConfig{});
    const ToyCase c = generate_toy_case({6, 48, 80}, 3, 11);
    const Volume vol = normalize_intensity(c.image);
    const InferenceConfig inf{{4, 32, 32}, 0.5};
    const WindowGrid grid = compute_window_grid(vol.extent(), inf.window, inf.overlap);
    std::vector<std::uint8_t> covered(vol.voxels(), 0);
    for (const Extent3& o : grid.origins)
      for (std::size_t z = 0; z < inf.window[0]; ++z)
        for (std::size_t y = 0; y < inf.window[1]; ++y)
          for (std::size_t x = 0; x < inf.window[2]; ++x)
            covered[((o[0] + z) * 48 + o[1] + y) * 80 + o[2] + x] = 1;
    const bool full = std::all_of(covered.begin(), covered.end(), [](auto v) { return v == 1; });
    const Tensor<float> probs = sliding_window_predict(vol, *enc, dec, inf);
    const std::size_t v = vol.voxels();
    double worst = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      double s = 0.0;
      for (std::size_t cls = 0; cls < 3; ++cls) s += probs[cls * v + k];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    const bool pass = nifti_ok && rvf_ok && full && worst <= kProbTol;
    return Outcome{pass, strf("%d NIfTI files %s, RVF f32/f64/u8 %s; %zu windows cover all %zu voxels: %s, "
                             "max |sum p - 1| %.1e <= %.0e",
                             files, nifti_ok ? "bitwise" : "LOSSY", rvf_ok ? "bitwise" : "LOSSY", grid.origins.size(), v,
                             full ? "yes" : "NO", worst, kProbTol)};
  });

  std::printf("%d of 10 criteria failed\n", g_failures);
  if (!keep) {
    std::error_code ec;
    fs::remove_all(work, ec);
  }
  return g_failures == 0 ? 0 : 1;
}
