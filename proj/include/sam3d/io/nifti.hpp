#pragma once

#include <array>
#include <filesystem>

#include "sam3d/io/volume.hpp"

namespace sam3d {

/// Raw NIfTI-1 header bytes of a file that was read, kept so derived outputs
/// (predicted label maps) can carry the same geometry.
struct NiftiHeader {
  std::array<unsigned char, 348> raw{};
};

struct NiftiImage {
  Volume volume;
  NiftiHeader header;
};

/// Reads a NIfTI-1 image (.nii, .nii.gz, or .hdr/.img pair). Data is cast to
/// float32 with axes (t, z, y, x) mapped to (M, D, H, W).
NiftiImage read_nifti(const std::filesystem::path& path);

/// Reads an integer label map; every value must be an integer in [0, num_classes).
LabelVolume read_nifti_labels(const std::filesystem::path& path, int num_classes);

/// Writes float32 data. A ".gz" suffix selects gzip compression. When `like` is
/// given its geometry fields are copied.
void write_nifti(const std::filesystem::path& path, const Volume& volume, const NiftiHeader* like = nullptr);

/// Writes a uint8 label map with the given geometry.
void write_nifti_labels(const std::filesystem::path& path, const LabelVolume& labels, const Spacing3& spacing,
                        const Spacing3& origin, const NiftiHeader* like = nullptr);

}  // namespace sam3d
