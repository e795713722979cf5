#include <cstddef>

#include "sam3d/kernels/kernels.hpp"

namespace sam3d::kernels::scalar {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

#define SAM3D_INSTANTIATE(T)                                                                      \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, \
                        std::size_t, T*, std::size_t, bool);                                    \
  template void axpy<T>(std::size_t, T, const T*, T*);                                          \
  template T dot<T>(std::size_t, const T*, const T*);

SAM3D_INSTANTIATE(float)
SAM3D_INSTANTIATE(double)
#undef SAM3D_INSTANTIATE

}  // namespace sam3d::kernels::scalar
