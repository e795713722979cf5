#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sam3d/metrics/metrics.hpp"
#include "test_util.hpp"

using namespace sam3d;

namespace {

Mask random_mask(const Extent3& e, double density, Rng& rng) {
  Mask m({e[0], e[1], e[2]});
  for (auto& v : m.vec()) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

Mask blob_mask(const Extent3& e, Rng& rng) {
  Mask m({e[0], e[1], e[2]});
  const double cz = rng.uniform(0, e[0]), cy = rng.uniform(0, e[1]), cx = rng.uniform(0, e[2]);
  const double r = rng.uniform(1.0, 6.0);
  for (std::size_t d = 0; d < e[0]; ++d)
    for (std::size_t h = 0; h < e[1]; ++h)
      for (std::size_t w = 0; w < e[2]; ++w) {
        const double dist = std::hypot(d - cz, h - cy, w - cx);
        m.at(d, h, w) = dist < r || rng.bernoulli(0.01) ? 1 : 0;
      }
  return m;
}

}  // namespace

TEST_CASE("dice coefficient") {
  Mask a({2, 2, 2}), b({2, 2, 2});
  CHECK(dice_coefficient(a, b) == 1.0);
  a[0] = a[1] = 1;
  CHECK(dice_coefficient(a, b) == 0.0);
  CHECK(dice_coefficient(a, a) == 1.0);
  b[1] = b[2] = 1;
  CHECK(dice_coefficient(a, b) == 0.5);
  b.fill(0);
  b[5] = b[6] = 1;
  CHECK(dice_coefficient(a, b) == 0.0);

  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Mask x = random_mask({3, 4, 5}, 0.4, rng), y = random_mask({3, 4, 5}, 0.4, rng);
    CHECK(dice_coefficient(x, y) == dice_coefficient(y, x));
  }
  CHECK_THROWS_AS(dice_coefficient(Mask({2, 2, 2}), Mask({2, 2, 3})), ValidationError);
}

TEST_CASE("boundary extraction") {
  Mask single({3, 3, 3});
  single.at(1, 1, 1) = 1;
  CHECK(extract_boundary(single) == std::vector<Extent3>{{1, 1, 1}});

  Mask cube({5, 5, 5});
  for (std::size_t d = 1; d < 4; ++d)
    for (std::size_t h = 1; h < 4; ++h)
      for (std::size_t w = 1; w < 4; ++w) cube.at(d, h, w) = 1;
  const auto b = extract_boundary(cube);
  CHECK(b.size() == 26);
  CHECK(std::find(b.begin(), b.end(), Extent3{2, 2, 2}) == b.end());

  Mask full({3, 3, 3}, 1);
  CHECK(extract_boundary(full).size() == 26);
  CHECK(extract_boundary(Mask({4, 4, 4})).empty());
}

TEST_CASE("hd95 hand cases") {
  Mask a({1, 4, 5}), b({1, 4, 5});
  a.at(0, 0, 0) = 1;
  b.at(0, 3, 4) = 1;
  CHECK(hd95(a, b, {1.0, 1.0, 1.0}).value() == 5.0);
  CHECK(hd95_bruteforce(a, b, {1.0, 1.0, 1.0}).value() == 5.0);
  CHECK(hd95(a, b, {1.0, 2.0, 1.0}).value() == doctest::Approx(std::sqrt(36.0 + 16.0)));
  CHECK(hd95(a, a, {1.0, 1.0, 1.0}).value() == 0.0);
  CHECK_FALSE(hd95(a, Mask({1, 4, 5}), {1.0, 1.0, 1.0}).has_value());
  CHECK_FALSE(hd95_bruteforce(Mask({1, 4, 5}), Mask({1, 4, 5}), {1.0, 1.0, 1.0}).has_value());
  CHECK_THROWS_AS(hd95(a, Mask({1, 4, 4}), {1.0, 1.0, 1.0}), ValidationError);
}

TEST_CASE("hd95 equals the brute-force oracle on random masks") {
  Rng rng(2024);
  for (int trial = 0; trial < 120; ++trial) {
    const Extent3 e{1 + rng.below(16), 1 + rng.below(16), 1 + rng.below(16)};
    const Spacing3 sp{rng.uniform(0.5, 3.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    const bool blobs = trial % 2 == 0;
    const Mask a = blobs ? blob_mask(e, rng) : random_mask(e, rng.uniform(0.01, 0.5), rng);
    const Mask b = blobs ? blob_mask(e, rng) : random_mask(e, rng.uniform(0.01, 0.5), rng);
    const auto fast = hd95(a, b, sp);
    const auto slow = hd95_bruteforce(a, b, sp);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) CHECK(std::abs(*fast - *slow) < 1e-6);
    if (fast) CHECK(*fast == doctest::Approx(*hd95(b, a, sp)));
  }
}

TEST_CASE("brute-force guard") {
  Rng rng(1);
  const Mask a = random_mask({30, 30, 30}, 0.5, rng), b = random_mask({30, 30, 30}, 0.5, rng);
  CHECK_THROWS_AS(hd95_bruteforce(a, b, {1.0, 1.0, 1.0}), ValidationError);
  CHECK(hd95(a, b, {1.0, 1.0, 1.0}).has_value());
}

TEST_CASE("per-case evaluation") {
  LabelVolume gt{test::random_labels({3, 8, 8}, 3, 5), 4};
  const CaseMetrics same = evaluate_volume(gt, gt, {1.0, 1.0, 1.0}, 4);
  REQUIRE(same.per_class.size() == 3);
  for (const auto& c : same.per_class) CHECK(c.dsc == 1.0);
  CHECK(same.per_class[0].hd95.value() == 0.0);
  CHECK_FALSE(same.per_class[2].hd95.has_value());
  CHECK(same.mean_dsc == 1.0);
  CHECK(same.mean_hd95.value() == 0.0);

  LabelVolume pred = gt;
  for (auto& v : pred.labels.vec()) v = v == 1 ? 2 : v;
  const CaseMetrics off = evaluate_volume(pred, gt, {1.0, 1.0, 1.0}, 4);
  CHECK(off.per_class[0].dsc == 0.0);
  CHECK(off.per_class[1].dsc < 1.0);
  CHECK(off.mean_dsc == doctest::Approx((off.per_class[0].dsc + off.per_class[1].dsc + 1.0) / 3.0));
  CHECK_FALSE(off.per_class[0].hd95.has_value());
  CHECK(off.mean_hd95.value() == doctest::Approx(*off.per_class[1].hd95));

  const auto j = off.to_json();
  CHECK(j["per_class"][0]["hd95"].is_null());
}

TEST_CASE("report csv") {
  LabelVolume gt{test::random_labels({2, 6, 6}, 3, 6), 3};
  LabelVolume pred{test::random_labels({2, 6, 6}, 3, 7), 3};
  EvaluationReport r;
  r.num_classes = 3;
  r.cases.push_back(evaluate_volume(pred, gt, {1.0, 1.0, 1.0}, 3));
  r.cases.back().case_id = "a";
  r.cases.push_back(evaluate_volume(gt, gt, {1.0, 1.0, 1.0}, 3));
  r.cases.back().case_id = "b";
  std::istringstream csv(r.to_csv());
  std::string header, row_a, row_b, mean;
  std::getline(csv, header);
  std::getline(csv, row_a);
  std::getline(csv, row_b);
  std::getline(csv, mean);
  CHECK(header == "case_id,dsc_1,dsc_2,mean_dsc,hd95_1,hd95_2,mean_hd95");
  CHECK(row_a.rfind("a,", 0) == 0);
  CHECK(row_b.rfind("b,1,1,1,0,0,0", 0) == 0);
  CHECK(mean.rfind("mean,", 0) == 0);
  CHECK(r.to_json()["cases"].size() == 2);
}
