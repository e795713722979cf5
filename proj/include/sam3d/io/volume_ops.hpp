#pragma once

#include <cstdint>

#include "sam3d/io/volume.hpp"

namespace sam3d {

enum class NormScheme { kZScore, kClipZScore };

struct NormalizeConfig {
  NormScheme scheme = NormScheme::kZScore;
  double p_low = 0.5;    // clip_zscore only, percent
  double p_high = 99.5;
};

/// Per-modality z-score (std clamped to >= 1e-8). kClipZScore first clips to
/// the [p_low, p_high] percentiles of the foreground intensities, where
/// foreground means voxels above the modality minimum.
Volume normalize_intensity(const Volume& vol, const NormalizeConfig& cfg = {});

/// Pads the trailing three axes by edge replication.
template <typename T>
Tensor<T> pad_edge(const Tensor<T>& t, const Extent3& before, const Extent3& after);

/// Copies a box of the trailing three axes; origin + size must fit.
template <typename T>
Tensor<T> crop(const Tensor<T>& t, const Extent3& origin, const Extent3& size);

/// Symmetric padding amounts needed to reach at least `target` per axis.
std::pair<Extent3, Extent3> padding_for(const Extent3& extent, const Extent3& target);

struct TrainingPatch {
  Volume image;
  LabelVolume labels;
  Extent3 origin{};  // crop origin in padded coordinates
};

/// Random axis-aligned crop of exactly `patch`. Undersized axes are edge-padded
/// first. With force_foreground the crop contains a labelled voxel whenever
/// the case has one.
TrainingPatch sample_training_patch(const Volume& vol, const LabelVolume& lab, const Extent3& patch,
                                    bool force_foreground, std::uint64_t seed);

/// Nearest-neighbour subsampling keeping index i * f on each axis.
LabelVolume downsample_label_volume(const LabelVolume& lab, const Extent3& factor);

}  // namespace sam3d
