#pragma once

// Single-sample 3D layers on (C, D, H, W) tensors with explicit backward
// passes. Templated on the scalar so float training and float64 gradient
// audits share one implementation.

#include <vector>

#include "sam3d/core/tensor.hpp"

namespace sam3d::nn {

/// Convolution with cubic kernel `k` (1 or 3), stride 1, zero padding k / 2.
/// weight is (Cout, Cin, k, k, k); bias is (Cout).
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Accumulates into dweight and dbias. dx is overwritten when non-null.
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dweight, Tensor<T>& dbias);

template <typename T>
struct NormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

/// Per-channel normalization over the spatial axes with affine (gamma, beta).
template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                                NormCache<T>* cache);

template <typename T>
Tensor<T> instance_norm_backward(const NormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& dy,
                                 Tensor<T>& dgamma, Tensor<T>& dbeta);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

/// dy * f'(x) where x is the pre-activation input.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy, T slope);

/// Linear interpolation x2 along H and W (depth untouched), half-pixel centres.
template <typename T>
Tensor<T> upsample_inplane_forward(const Tensor<T>& x);

template <typename T>
Tensor<T> upsample_inplane_backward(const Tensor<T>& dy);

}  // namespace sam3d::nn
