#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sam3d/core/tensor.hpp"
#include "sam3d/decoder/decoder.hpp"

namespace sam3d {

/// w_l proportional to 2^(1 - l), normalized to sum 1.
std::vector<double> deep_supervision_weights(std::size_t levels);

struct LossConfig {
  std::size_t num_classes = 2;
  double epsilon = 1e-5;
  bool include_background = true;
  std::vector<double> ds_weights = deep_supervision_weights(kNumStages);

  void validate() const;
};

struct LossTerms {
  double total = 0.0;
  double dice = 0.0;
  double ce = 0.0;
};

// Logits are (N, D, H, W); labels are (D, H, W) with values < N.
// When grad is non-null, weight * dLoss/dlogits is added to it (it is sized
// and zeroed first if empty).

template <typename T>
double soft_dice_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels, double eps,
                      bool include_background = true, Tensor<T>* grad = nullptr, double weight = 1.0);

template <typename T>
double cross_entropy_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels, Tensor<T>* grad = nullptr,
                          double weight = 1.0);

/// Dice + cross-entropy with unit weights.
template <typename T>
LossTerms combined_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels, const LossConfig& cfg,
                        Tensor<T>* grad = nullptr, double weight = 1.0);

/// Sum over stages of ds_weights[l] * combined_loss(stage l, labels downsampled
/// in-plane by 2^l). Terms are reported with the same weighting.
template <typename T>
LossTerms deep_supervision_loss(const DecoderOutputs<T>& outputs, const Tensor<std::uint8_t>& labels,
                                const LossConfig& cfg, std::array<Tensor<T>, kNumStages>* grads = nullptr,
                                double weight = 1.0);

}  // namespace sam3d
