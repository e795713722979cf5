#pragma once

#include <cstdint>
#include <filesystem>

#include "sam3d/io/manifest.hpp"

namespace sam3d {

struct ToyCase {
  Volume image;
  LabelVolume labels;
};

/// One synthetic case: one ellipsoid per foreground class over a smooth noise
/// background, each class shifted by its own intensity offset. Every
/// foreground class is guaranteed at least one voxel.
ToyCase generate_toy_case(const Extent3& shape, int num_classes, std::uint64_t seed);

/// Writes images/<id>.nii.gz, labels/<id>.nii.gz and manifest.json (all cases
/// in the train split, patch size = shape) under out_dir.
DatasetManifest generate_toy_dataset(const std::filesystem::path& out_dir, std::size_t n_cases, const Extent3& shape,
                                     int num_classes, std::uint64_t seed);

}  // namespace sam3d
