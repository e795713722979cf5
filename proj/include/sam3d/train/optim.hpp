#pragma once

#include <cstddef>
#include <vector>

#include "sam3d/decoder/parameters.hpp"

namespace sam3d {

/// init_lr * (1 - epoch / max_epoch)^power. Throws ValidationError unless
/// 0 <= epoch <= max_epoch.
double poly_learning_rate(std::size_t epoch, std::size_t max_epoch, double init_lr = 1e-2, double power = 0.9);

/// Velocity buffers aligned with a ParameterSet.
template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;

  static SgdState zeros_like(const ParameterSet<T>& params) {
    SgdState s;
    for (const auto& p : params) s.velocity.emplace_back(p.value.shape());
    return s;
  }
};

struct SgdConfig {
  double momentum = 0.99;
  double weight_decay = 3e-5;
  bool nesterov = false;
};

/// g = grad + wd * param (wd only where decay is set); v = m * v + g;
/// param -= lr * v (or lr * (g + m * v) with Nesterov).
/// Throws NumericError naming the first tensor holding a non-finite gradient,
/// before anything is modified.
template <typename T>
void sgd_update(ParameterSet<T>& params, SgdState<T>& state, double lr, const SgdConfig& cfg);

}  // namespace sam3d
