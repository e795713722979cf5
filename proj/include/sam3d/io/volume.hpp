#pragma once

#include <array>
#include <cstdint>

#include "sam3d/core/tensor.hpp"

namespace sam3d {

/// Axis order is (D, H, W) for every spatial triple in the project.
using Extent3 = std::array<std::size_t, 3>;
using Spacing3 = std::array<double, 3>;

/// Scalar image with one or more modalities, axes (M, D, H, W).
struct Volume {
  Tensor<float> data;
  Spacing3 spacing{1.0, 1.0, 1.0};  // mm per voxel along (D, H, W)
  Spacing3 origin{0.0, 0.0, 0.0};

  std::size_t modalities() const { return data.dim(0); }
  std::size_t depth() const { return data.dim(1); }
  std::size_t height() const { return data.dim(2); }
  std::size_t width() const { return data.dim(3); }
  Extent3 extent() const { return {depth(), height(), width()}; }
  std::size_t voxels() const { return depth() * height() * width(); }

  /// Throws ShapeError / ValidationError when the invariants do not hold.
  void validate() const;
};

/// Integer class map with axes (D, H, W); 0 is background.
struct LabelVolume {
  Tensor<std::uint8_t> labels;
  int num_classes = 2;

  Extent3 extent() const { return {labels.dim(0), labels.dim(1), labels.dim(2)}; }
  std::size_t voxels() const { return labels.size(); }

  void validate() const;
};

inline Extent3 extent_of(const Shape& s) { return {s.at(s.size() - 3), s.at(s.size() - 2), s.at(s.size() - 1)}; }

inline std::string extent_str(const Extent3& e) {
  return shape_str(Shape{e[0], e[1], e[2]});
}

}  // namespace sam3d
