#include "sam3d/app/toy_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sam3d/core/error.hpp"
#include "sam3d/core/rng.hpp"
#include "sam3d/io/nifti.hpp"

namespace fs = std::filesystem;

namespace sam3d {
namespace {

// Linear resize of one axis with half-pixel centres, clamped at the edges.
std::vector<double> resize_axis(const std::vector<double>& in, std::size_t outer, std::size_t n, std::size_t inner,
                                std::size_t m) {
  std::vector<double> out(outer * m * inner);
  for (std::size_t o = 0; o < m; ++o) {
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(n) / static_cast<double>(m) - 0.5;
    src = std::max(src, 0.0);
    const std::size_t i0 = std::min(static_cast<std::size_t>(src), n - 1);
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double t = src - static_cast<double>(i0);
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        out[(a * m + o) * inner + b] =
            (1.0 - t) * in[(a * n + i0) * inner + b] + t * in[(a * n + i1) * inner + b];
      }
    }
  }
  return out;
}

double class_offset(int c) {
  const double mag = 1.5 * (1.0 + static_cast<double>((c - 1) / 2));
  return c % 2 == 1 ? mag : -mag;
}

}  // namespace

ToyCase generate_toy_case(const Extent3& shape, int num_classes, std::uint64_t seed) {
  const std::size_t D = shape[0], H = shape[1], W = shape[2];
  if (H % 16 || W % 16 || D == 0 || H == 0 || W == 0) {
    throw ValidationError("toy dataset: in-plane extents must be positive multiples of 16, got " + extent_str(shape));
  }
  if (num_classes < 2 || num_classes > 16) throw ValidationError("toy dataset: num_classes must be in [2, 16]");

  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(Rng::derive(seed, {attempt}));
    const std::size_t h8 = std::max<std::size_t>(H / 8, 1), w8 = std::max<std::size_t>(W / 8, 1);
    std::vector<double> coarse(D * h8 * w8);
    for (double& v : coarse) v = rng.normal(0.0, 0.3);
    std::vector<double> bg = resize_axis(resize_axis(coarse, D, h8, w8, H), D * H, w8, 1, W);

    Tensor<std::uint8_t> lab({D, H, W});
    const double side = static_cast<double>(std::min(H, W));
    const double rz = std::max(1.0, static_cast<double>(D) / 2.0);
    for (int c = num_classes - 1; c >= 1; --c) {
      const double r = rng.uniform(side * 10.0 / 64.0, side * 15.0 / 64.0);
      const double cy = rng.uniform(r, static_cast<double>(H) - r);
      const double cx = rng.uniform(r, static_cast<double>(W) - r);
      const double cz = rng.uniform(static_cast<double>(D) * 3.0 / 8.0, static_cast<double>(D) * 5.0 / 8.0);
      for (std::size_t z = 0; z < D; ++z) {
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double dz = (static_cast<double>(z) - cz) / rz;
            if ((dy * dy + dx * dx) / (r * r) + dz * dz <= 1.0) lab.at(z, y, x) = static_cast<std::uint8_t>(c);
          }
        }
      }
    }
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (std::uint8_t v : lab.vec()) ++counts[v];
    if (std::any_of(counts.begin() + 1, counts.end(), [](std::size_t n) { return n == 0; })) continue;

    std::vector<double> img(D * H * W);
    double mean = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      const int c = lab[i];
      img[i] = bg[i] + (c ? class_offset(c) : 0.0) + rng.normal(0.0, 0.1);
      mean += img[i];
    }
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (double v : img) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(img.size()));
    Tensor<float> data({1, D, H, W});
    for (std::size_t i = 0; i < img.size(); ++i) data[i] = static_cast<float>((img[i] - mean) / sd);

    ToyCase tc;
    tc.image = Volume{std::move(data), {3.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
    tc.labels = LabelVolume{std::move(lab), num_classes};
    return tc;
  }
}

DatasetManifest generate_toy_dataset(const fs::path& out_dir, std::size_t n_cases, const Extent3& shape,
                                     int num_classes, std::uint64_t seed) {
  if (n_cases == 0) throw ValidationError("toy dataset: need at least one case");
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "labels");
  DatasetManifest m;
  m.num_classes = num_classes;
  m.patch_size = shape;
  for (std::size_t i = 0; i < n_cases; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "toy_%03zu", i);
    const ToyCase tc = generate_toy_case(shape, num_classes, Rng::derive(seed, {i}));
    CaseEntry e;
    e.case_id = id;
    e.image = out_dir / "images" / (std::string(id) + ".nii.gz");
    e.label = out_dir / "labels" / (std::string(id) + ".nii.gz");
    e.modality_count = 1;
    e.split = "train";
    write_nifti(e.image, tc.image);
    write_nifti_labels(e.label, tc.labels, tc.image.spacing, tc.image.origin);
    m.cases.push_back(e);
  }
  m.validate();
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace sam3d
