#include <cmath>
#include <numeric>

#include "doctest.h"
#include "sam3d/io/volume_ops.hpp"
#include "sam3d/objective/loss.hpp"
#include "test_util.hpp"

using namespace sam3d;

namespace {

// Direct evaluation of the volumetric soft dice in long double.
double oracle_dice(const Tensor<double>& logits, const Tensor<std::uint8_t>& labels, double eps, bool bg) {
  const std::size_t n = logits.dim(0), v = labels.size();
  long double total = 0.0L;
  std::size_t classes = 0;
  for (std::size_t c = bg ? 0 : 1; c < n; ++c) {
    long double inter = 0, pp = 0, gg = 0;
    for (std::size_t i = 0; i < v; ++i) {
      long double z = 0;
      for (std::size_t k = 0; k < n; ++k) z += std::exp(static_cast<long double>(logits[k * v + i]));
      const long double p = std::exp(static_cast<long double>(logits[c * v + i])) / z;
      const long double g = labels[i] == c ? 1 : 0;
      inter += p * g;
      pp += p * p;
      gg += g * g;
    }
    total += (2 * inter + eps) / (pp + gg + eps);
    ++classes;
  }
  return static_cast<double>(1.0L - total / classes);
}

Tensor<double> one_hot_logits(const Tensor<std::uint8_t>& labels, std::size_t n, double margin) {
  const std::size_t v = labels.size();
  Shape s{n};
  s.insert(s.end(), labels.shape().begin(), labels.shape().end());
  Tensor<double> out(s);
  for (std::size_t i = 0; i < v; ++i) out[labels[i] * v + i] = margin;
  return out;
}

DecoderOutputs<double> stage_outputs(const Tensor<std::uint8_t>& labels, std::size_t n, std::uint64_t seed) {
  DecoderOutputs<double> out;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t f = std::size_t{1} << s;
    out.logits[s] = test::random_tensor<double>({n, labels.dim(0), labels.dim(1) / f, labels.dim(2) / f}, seed + s);
  }
  return out;
}

}  // namespace

TEST_CASE("single voxel uniform two-class case") {
  const Tensor<double> logits({2, 1, 1, 1});
  const Tensor<std::uint8_t> label({1, 1, 1}, 1);
  const double dice = soft_dice_loss(logits, label, 1e-5);
  const double ce = cross_entropy_loss(logits, label);
  CHECK(dice == doctest::Approx(0.6).epsilon(1e-3));
  CHECK(std::abs(dice - oracle_dice(logits, label, 1e-5, true)) < 1e-12);
  CHECK(std::abs(ce - std::log(2.0)) < 1e-12);
  LossConfig cfg;
  const LossTerms t = combined_loss(logits, label, cfg);
  CHECK(t.total == doctest::Approx(0.6 + std::log(2.0)).epsilon(1e-3));
  CHECK(t.total == doctest::Approx(t.dice + t.ce));
}

TEST_CASE("dice and cross-entropy against oracles on random inputs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 2 + seed % 3;
    const auto logits = test::random_tensor<double>({n, 2, 3, 4}, seed, 3.0);
    const auto labels = test::random_labels({2, 3, 4}, static_cast<int>(n), seed + 100);
    for (bool bg : {true, false}) {
      const double d = soft_dice_loss(logits, labels, 1e-5, bg);
      CHECK(d == doctest::Approx(oracle_dice(logits, labels, 1e-5, bg)).epsilon(1e-12));
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
    }
    long double ce = 0;
    const std::size_t v = labels.size();
    for (std::size_t i = 0; i < v; ++i) {
      long double z = 0;
      for (std::size_t k = 0; k < n; ++k) z += std::exp(static_cast<long double>(logits[k * v + i]));
      ce += std::log(z) - logits[labels[i] * v + i];
    }
    CHECK(cross_entropy_loss(logits, labels) == doctest::Approx(static_cast<double>(ce / v)).epsilon(1e-12));
  }
}

TEST_CASE("perfect predictions drive the loss to zero") {
  const auto labels = test::random_labels({2, 8, 8}, 3, 1);
  const auto logits = one_hot_logits(labels, 3, 30.0);
  LossConfig cfg;
  cfg.num_classes = 3;
  const LossTerms t = combined_loss(logits, labels, cfg);
  CHECK(t.total < 1e-4);
  CHECK(cross_entropy_loss(one_hot_logits(labels, 3, 20.0), labels) < 1e-8);

  DecoderOutputs<double> out;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t f = std::size_t{1} << s;
    out.logits[s] = one_hot_logits(downsample_label_volume({labels, 3}, {1, f, f}).labels, 3, 30.0);
  }
  CHECK(deep_supervision_loss(out, labels, cfg).total < 1e-4);
}

TEST_CASE("stable log-sum-exp and shift invariance") {
  auto logits = test::random_tensor<double>({3, 1, 2, 2}, 2);
  const auto labels = test::random_labels({1, 2, 2}, 3, 3);
  const double base = cross_entropy_loss(logits, labels);
  const double base_dice = soft_dice_loss(logits, labels, 1e-5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) logits[c * 4 + i] += 1000.0 * (i + 1);
  CHECK(cross_entropy_loss(logits, labels) == doctest::Approx(base).epsilon(1e-9));
  CHECK(soft_dice_loss(logits, labels, 1e-5) == doctest::Approx(base_dice).epsilon(1e-9));
}

TEST_CASE("class permutation equivariance") {
  const std::size_t n = 4;
  const auto logits = test::random_tensor<double>({n, 2, 4, 4}, 4, 2.0);
  const auto labels = test::random_labels({2, 4, 4}, static_cast<int>(n), 5);
  const std::array<std::uint8_t, n> perm{2, 0, 3, 1};
  Tensor<double> pl(logits.shape());
  Tensor<std::uint8_t> plab(labels.shape());
  const std::size_t v = labels.size();
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t i = 0; i < v; ++i) pl[perm[c] * v + i] = logits[c * v + i];
  for (std::size_t i = 0; i < v; ++i) plab[i] = perm[labels[i]];
  LossConfig cfg;
  cfg.num_classes = n;
  const LossTerms a = combined_loss(logits, labels, cfg), b = combined_loss(pl, plab, cfg);
  CHECK(a.dice == doctest::Approx(b.dice).epsilon(1e-12));
  CHECK(a.ce == doctest::Approx(b.ce).epsilon(1e-12));
}

TEST_CASE("correcting a wrong one-hot voxel strictly lowers the loss") {
  auto labels = test::random_labels({1, 4, 4}, 2, 6);
  auto logits = one_hot_logits(labels, 2, 5.0);
  const std::size_t v = labels.size();
  std::swap(logits[0 * v + 3], logits[1 * v + 3]);
  LossConfig cfg;
  const double wrong = combined_loss(logits, labels, cfg).total;
  std::swap(logits[0 * v + 3], logits[1 * v + 3]);
  CHECK(combined_loss(logits, labels, cfg).total < wrong);
}

TEST_CASE("combined loss dominates each term") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto logits = test::random_tensor<double>({3, 2, 2, 2}, seed, 4.0);
    const auto labels = test::random_labels({2, 2, 2}, 3, seed + 50);
    LossConfig cfg;
    cfg.num_classes = 3;
    const LossTerms t = combined_loss(logits, labels, cfg);
    CHECK(t.total >= std::max(t.dice, t.ce));
  }
}

TEST_CASE("deep supervision weights") {
  const auto w3 = deep_supervision_weights(3);
  REQUIRE(w3.size() == 3);
  CHECK(w3[0] == 4.0 / 7.0);
  CHECK(w3[1] == 2.0 / 7.0);
  CHECK(w3[2] == 1.0 / 7.0);
  CHECK(deep_supervision_weights(1) == std::vector<double>{1.0});
  for (std::size_t l = 1; l <= 8; ++l) {
    const auto w = deep_supervision_weights(l);
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
    for (std::size_t i = 1; i < l; ++i) CHECK(w[i] < w[i - 1]);
  }
}

TEST_CASE("deep supervision with one perfect stage") {
  const Tensor<std::uint8_t> labels({1, 4, 4}, 1);
  DecoderOutputs<double> out;
  out.logits[0] = one_hot_logits(labels, 2, 40.0);
  out.logits[1] = Tensor<double>({2, 1, 2, 2});
  out.logits[2] = Tensor<double>({2, 1, 1, 1});
  LossConfig cfg;
  const double total = deep_supervision_loss(out, labels, cfg).total;
  CHECK(total == doctest::Approx(3.0 / 7.0 * (0.6 + std::log(2.0))).epsilon(1e-3));
  CHECK(total == doctest::Approx(0.554).epsilon(1e-3));

  LossConfig scaled = cfg;
  for (auto& w : scaled.ds_weights) w *= 3.0;
  const double sum = std::accumulate(scaled.ds_weights.begin(), scaled.ds_weights.end(), 0.0);
  for (auto& w : scaled.ds_weights) w /= sum;
  CHECK(deep_supervision_loss(out, labels, scaled).total == doctest::Approx(total).epsilon(1e-12));

  out.logits[1] = Tensor<double>({2, 1, 3, 3});
  CHECK_THROWS_AS(deep_supervision_loss(out, labels, cfg), ShapeError);
}

TEST_CASE("label values must be below the class count") {
  const Tensor<double> logits({2, 1, 1, 2});
  Tensor<std::uint8_t> labels({1, 1, 2});
  labels[1] = 2;
  CHECK_THROWS_AS(soft_dice_loss(logits, labels, 1e-5), ValidationError);
  CHECK_THROWS_AS(cross_entropy_loss(logits, labels), ValidationError);
}

TEST_CASE("deep supervision gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto labels = test::random_labels({2, 4, 4}, 2, seed + 10);
    DecoderOutputs<double> out = stage_outputs(labels, 2, seed * 10);
    LossConfig cfg;
    cfg.include_background = seed % 2 == 0;
    std::array<Tensor<double>, kNumStages> grads;
    deep_supervision_loss(out, labels, cfg, &grads, 0.5);
    double worst = 0.0;
    for (std::size_t s = 0; s < kNumStages; ++s) {
      for (std::size_t i = 0; i < out.logits[s].size(); ++i) {
        const double saved = out.logits[s][i];
        out.logits[s][i] = saved + 1e-4;
        const double up = deep_supervision_loss(out, labels, cfg).total;
        out.logits[s][i] = saved - 1e-4;
        const double down = deep_supervision_loss(out, labels, cfg).total;
        out.logits[s][i] = saved;
        const double num = 0.5 * (up - down) / 2e-4;
        const double an = grads[s][i];
        worst = std::max(worst, std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-6}));
      }
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("loss gradients accumulate") {
  const auto logits = test::random_tensor<double>({3, 1, 2, 2}, 11);
  const auto labels = test::random_labels({1, 2, 2}, 3, 12);
  LossConfig cfg;
  cfg.num_classes = 3;
  Tensor<double> once, twice;
  combined_loss(logits, labels, cfg, &once);
  combined_loss(logits, labels, cfg, &twice);
  combined_loss(logits, labels, cfg, &twice);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2.0 * once[i]));
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.ds_weights = {0.5, 0.25, 0.2};
  CHECK_THROWS(cfg.validate());
  cfg = LossConfig{};
  cfg.epsilon = -1.0;
  CHECK_THROWS(cfg.validate());
}
