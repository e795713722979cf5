#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sam3d/io/volume.hpp"

namespace sam3d {

struct CaseEntry {
  std::string case_id;
  std::filesystem::path image;
  std::filesystem::path label;
  int modality_count = 1;
  std::string split = "train";  // "train" or "validation"
};

struct DatasetManifest {
  std::vector<CaseEntry> cases;
  Extent3 patch_size{1, 16, 16};
  int num_classes = 2;

  /// Patch in-plane extents must be multiples of 16; modality counts must agree.
  void validate() const;
  std::vector<CaseEntry> cases_in(const std::string& split) const;
  const CaseEntry& find(const std::string& case_id) const;
};

/// Relative image/label paths are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace sam3d
