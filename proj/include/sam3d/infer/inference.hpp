#pragma once

#include <vector>

#include "sam3d/decoder/decoder.hpp"
#include "sam3d/encoder/encoder.hpp"
#include "sam3d/io/volume.hpp"

namespace sam3d {

struct WindowGrid {
  Extent3 window{};
  Extent3 shape{};  // shape the grid tiles (after padding)
  double overlap = 0.5;
  std::vector<Extent3> origins;  // lexicographic
};

/// Axes smaller than the window are treated as padded up to it.
WindowGrid compute_window_grid(const Extent3& shape, const Extent3& window, double overlap);

/// Separable Gaussian, sigma = extent / 8, peak 1, floored at 1e-4.
Tensor<double> gaussian_importance_map(const Extent3& window);

struct InferenceConfig {
  Extent3 window{0, 0, 0};  // all zero: the whole (padded) volume
  double overlap = 0.5;
};

/// Fused class probabilities (N, D, H, W) for a normalized volume.
Tensor<float> sliding_window_predict(const Volume& vol, const SliceEncoder& encoder, const Decoder<float>& decoder,
                                     const InferenceConfig& cfg);

/// Ties go to the lowest class index.
LabelVolume argmax_segmentation(const Tensor<float>& probs);

}  // namespace sam3d
