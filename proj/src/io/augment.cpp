#include "sam3d/io/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sam3d/core/error.hpp"
#include "sam3d/core/rng.hpp"

namespace sam3d {

namespace {

struct Affine {
  double angle = 0.0;  // radians, in-plane
  double scale = 1.0;
};

// Maps every output voxel back to its source position and resamples.
void resample(Volume& image, LabelVolume& labels, const Affine& tf) {
  const Extent3 e = image.extent();
  const double cd = (static_cast<double>(e[0]) - 1.0) / 2.0;
  const double ch = (static_cast<double>(e[1]) - 1.0) / 2.0;
  const double cw = (static_cast<double>(e[2]) - 1.0) / 2.0;
  const double c = std::cos(tf.angle);
  const double s = std::sin(tf.angle);
  const double inv = 1.0 / tf.scale;
  const std::size_t n = image.voxels();
  Tensor<float> img_out(image.data.shape());
  Tensor<std::uint8_t> lab_out(labels.labels.shape());

  auto clampd = [](double v, std::size_t len) { return std::clamp(v, 0.0, static_cast<double>(len) - 1.0); };

  for (std::size_t d = 0; d < e[0]; ++d) {
    const double sd = clampd((static_cast<double>(d) - cd) * inv + cd, e[0]);
    for (std::size_t h = 0; h < e[1]; ++h) {
      for (std::size_t w = 0; w < e[2]; ++w) {
        const double y = static_cast<double>(h) - ch;
        const double x = static_cast<double>(w) - cw;
        const double sh = clampd((c * y + s * x) * inv + ch, e[1]);
        const double sw = clampd((-s * y + c * x) * inv + cw, e[2]);
        const std::size_t out_idx = (d * e[1] + h) * e[2] + w;

        const auto nd = static_cast<std::size_t>(std::lround(sd));
        const auto nh = static_cast<std::size_t>(std::lround(sh));
        const auto nw = static_cast<std::size_t>(std::lround(sw));
        lab_out[out_idx] = labels.labels.at(nd, nh, nw);

        const auto d0 = static_cast<std::size_t>(sd);
        const auto h0 = static_cast<std::size_t>(sh);
        const auto w0 = static_cast<std::size_t>(sw);
        const std::size_t d1 = std::min(d0 + 1, e[0] - 1);
        const std::size_t h1 = std::min(h0 + 1, e[1] - 1);
        const std::size_t w1 = std::min(w0 + 1, e[2] - 1);
        const double fd = sd - static_cast<double>(d0);
        const double fh = sh - static_cast<double>(h0);
        const double fw = sw - static_cast<double>(w0);
        for (std::size_t m = 0; m < image.modalities(); ++m) {
          const float* src = image.data.data() + m * n;
          auto at = [&](std::size_t dd, std::size_t hh, std::size_t ww) {
            return static_cast<double>(src[(dd * e[1] + hh) * e[2] + ww]);
          };
          const double v00 = at(d0, h0, w0) * (1 - fw) + at(d0, h0, w1) * fw;
          const double v01 = at(d0, h1, w0) * (1 - fw) + at(d0, h1, w1) * fw;
          const double v10 = at(d1, h0, w0) * (1 - fw) + at(d1, h0, w1) * fw;
          const double v11 = at(d1, h1, w0) * (1 - fw) + at(d1, h1, w1) * fw;
          const double v0 = v00 * (1 - fh) + v01 * fh;
          const double v1 = v10 * (1 - fh) + v11 * fh;
          img_out[m * n + out_idx] = static_cast<float>(v0 * (1 - fd) + v1 * fd);
        }
      }
    }
  }
  image.data = std::move(img_out);
  labels.labels = std::move(lab_out);
}

}  // namespace

void mirror_axis(Volume& image, LabelVolume& labels, int axis) {
  if (axis < 0 || axis > 2) throw ValidationError("mirror axis must be 0, 1 or 2");
  const Extent3 e = image.extent();
  const std::size_t n = image.voxels();
  auto flip = [&](auto* base) {
    for (std::size_t d = 0; d < e[0]; ++d) {
      for (std::size_t h = 0; h < e[1]; ++h) {
        for (std::size_t w = 0; w < e[2]; ++w) {
          std::size_t dd = d, hh = h, ww = w;
          if (axis == 0) {
            if (d >= e[0] / 2) continue;
            dd = e[0] - 1 - d;
          } else if (axis == 1) {
            if (h >= e[1] / 2) continue;
            hh = e[1] - 1 - h;
          } else {
            if (w >= e[2] / 2) continue;
            ww = e[2] - 1 - w;
          }
          std::swap(base[(d * e[1] + h) * e[2] + w], base[(dd * e[1] + hh) * e[2] + ww]);
        }
      }
    }
  };
  for (std::size_t m = 0; m < image.modalities(); ++m) flip(image.data.data() + m * n);
  flip(labels.labels.data());
}

Augmented apply_augmentations(const Volume& image, const LabelVolume& labels, const AugmentConfig& cfg,
                              std::uint64_t seed) {
  if (image.extent() != labels.extent()) {
    throw ShapeError("augmentation needs aligned image and labels, got " + extent_str(image.extent()) + " vs " +
                     extent_str(labels.extent()));
  }
  Augmented out{image, labels, false};
  Rng rng(seed);

  Affine tf;
  bool geometric = false;
  if (rng.bernoulli(cfg.p_rotation)) {
    tf.angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
    geometric = true;
  }
  if (rng.bernoulli(cfg.p_scale)) {
    tf.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    geometric = true;
  }
  if (geometric) {
    resample(out.image, out.labels, tf);
    out.changed = true;
  }

  const std::size_t n = image.voxels();
  for (std::size_t m = 0; m < image.modalities(); ++m) {
    float* v = out.image.data.data() + m * n;
    if (rng.bernoulli(cfg.p_brightness)) {
      const auto factor = static_cast<float>(rng.uniform(cfg.brightness_min, cfg.brightness_max));
      for (std::size_t i = 0; i < n; ++i) v[i] *= factor;
      out.changed = true;
    }
    if (rng.bernoulli(cfg.p_gamma)) {
      const double gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
      const auto [lo_it, hi_it] = std::minmax_element(v, v + n);
      const double lo = *lo_it;
      const double range = static_cast<double>(*hi_it) - lo;
      if (range > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = static_cast<float>(std::pow((v[i] - lo) / range, gamma) * range + lo);
        }
        out.changed = true;
      }
    }
  }

  for (int axis = 0; axis < 3; ++axis) {
    if (rng.bernoulli(cfg.p_mirror)) {
      mirror_axis(out.image, out.labels, axis);
      out.changed = true;
    }
  }
  return out;
}

}  // namespace sam3d
