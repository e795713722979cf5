#pragma once

#include <cstdint>

#include "sam3d/io/volume.hpp"

namespace sam3d {

/// Trigger probabilities and parameter ranges for training-time augmentation.
struct AugmentConfig {
  double p_rotation = 0.2;
  double max_rotation_deg = 30.0;  // in-plane, uniform in [-max, max]
  double p_scale = 0.2;
  double scale_min = 0.7;
  double scale_max = 1.4;
  double p_brightness = 0.2;
  double brightness_min = 0.75;
  double brightness_max = 1.25;
  double p_gamma = 0.2;
  double gamma_min = 0.7;
  double gamma_max = 1.5;
  double p_mirror = 0.5;  // per axis

  static AugmentConfig disabled() {
    AugmentConfig c;
    c.p_rotation = c.p_scale = c.p_brightness = c.p_gamma = c.p_mirror = 0.0;
    return c;
  }
  bool is_disabled() const {
    return p_rotation == 0.0 && p_scale == 0.0 && p_brightness == 0.0 && p_gamma == 0.0 && p_mirror == 0.0;
  }
};

struct Augmented {
  Volume image;
  LabelVolume labels;
  bool changed = false;
};

/// Geometric transforms use trilinear sampling for the image and nearest
/// sampling for labels, both clamped to the edge, so labels never gain values.
Augmented apply_augmentations(const Volume& image, const LabelVolume& labels, const AugmentConfig& cfg,
                              std::uint64_t seed);

/// Reverses the order of voxels along spatial axis 0 (D), 1 (H) or 2 (W).
void mirror_axis(Volume& image, LabelVolume& labels, int axis);

}  // namespace sam3d
