#include "sam3d/train/optim.hpp"

#include <cmath>
#include <string>

#include "sam3d/core/error.hpp"

namespace sam3d {

double poly_learning_rate(std::size_t epoch, std::size_t max_epoch, double init_lr, double power) {
  if (max_epoch == 0 || epoch > max_epoch) {
    throw ValidationError("poly lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(max_epoch) +
                          "]");
  }
  return init_lr * std::pow(1.0 - static_cast<double>(epoch) / static_cast<double>(max_epoch), power);
}

template <typename T>
void sgd_update(ParameterSet<T>& params, SgdState<T>& state, double lr, const SgdConfig& cfg) {
  if (state.velocity.size() != params.size()) throw ShapeError("sgd: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.velocity[i].shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw ShapeError("sgd: shape mismatch for " + p.name);
    }
    for (std::size_t j = 0; j < p.grad.size(); ++j) {
      if (!std::isfinite(p.grad[j])) {
        throw NumericError("sgd: non-finite gradient in " + p.name + " at element " + std::to_string(j));
      }
    }
  }
  const T m = static_cast<T>(cfg.momentum);
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const T wd = p.decay ? static_cast<T>(cfg.weight_decay) : T{0};
    T* v = state.velocity[i].data();
    T* w = p.value.data();
    const T* g = p.grad.data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T gj = g[j] + wd * w[j];
      v[j] = m * v[j] + gj;
      w[j] -= step * (cfg.nesterov ? gj + m * v[j] : v[j]);
    }
  }
}

template void sgd_update(ParameterSet<float>&, SgdState<float>&, double, const SgdConfig&);
template void sgd_update(ParameterSet<double>&, SgdState<double>&, double, const SgdConfig&);

}  // namespace sam3d
