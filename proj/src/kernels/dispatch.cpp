#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "sam3d/core/error.hpp"
#include "sam3d/kernels/kernels.hpp"

namespace sam3d::kernels {

#if !defined(SAM3D_HAVE_AVX2)
namespace avx2 {
// Never selected: isa_supported(kAvx2) is false without the AVX2 build.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  scalar::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  scalar::axpy(n, alpha, x, y);
}
template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  return scalar::dot(n, x, y);
}
template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*,
                          std::size_t, float*, std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t, const double*,
                           std::size_t, double*, std::size_t, bool);
template void axpy<float>(std::size_t, float, const float*, float*);
template void axpy<double>(std::size_t, double, const double*, double*);
template float dot<float>(std::size_t, const float*, const float*);
template double dot<double>(std::size_t, const double*, const double*);
}  // namespace avx2
#endif

namespace {

bool cpu_has_avx2() {
#if defined(SAM3D_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{best_isa()};
  return isa;
}

std::atomic<unsigned>& threads() {
  static std::atomic<unsigned> n{1};
  return n;
}

// Below this many multiply-adds a GEMM stays on the calling thread.
constexpr std::size_t kParallelWork = std::size_t{1} << 20;

template <typename T>
void gemm_isa(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
              std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (active().load(std::memory_order_relaxed) == Isa::kAvx2) {
    avx2::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    scalar::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) { return isa == Isa::kScalar || cpu_has_avx2(); }

Isa best_isa() { return cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar; }

Isa active_isa() { return active().load(); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw UnsupportedError("instruction set '" + std::string(isa_name(isa)) + "' is not supported on this CPU");
  }
  active().store(isa);
}

void set_num_threads(unsigned n) { threads().store(std::max(1u, n)); }

unsigned num_threads() { return threads().load(); }

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  const unsigned nt = num_threads();
  if (nt <= 1 || m * n * k < kParallelWork) {
    gemm_isa(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
    return;
  }
  // Split rows when there are enough of them, columns otherwise. Per-element
  // accumulation order is unchanged either way.
  std::vector<std::jthread> pool;
  if (m >= 6 * nt) {
    const std::size_t chunk = (m + nt - 1) / nt;
    for (std::size_t r0 = 0; r0 < m; r0 += chunk) {
      const std::size_t rows = std::min(chunk, m - r0);
      pool.emplace_back([=] { gemm_isa(rows, n, k, a + r0 * lda, lda, b, ldb, c + r0 * ldc, ldc, accumulate); });
    }
  } else {
    const std::size_t chunk = ((n + nt - 1) / nt + 15) / 16 * 16;
    for (std::size_t c0 = 0; c0 < n; c0 += chunk) {
      const std::size_t cols = std::min(chunk, n - c0);
      pool.emplace_back([=] { gemm_isa(m, cols, k, a, lda, b + c0, ldb, c + c0, ldc, accumulate); });
    }
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  if (active_isa() == Isa::kAvx2) {
    avx2::axpy(n, alpha, x, y);
  } else {
    scalar::axpy(n, alpha, x, y);
  }
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  return active_isa() == Isa::kAvx2 ? avx2::dot(n, x, y) : scalar::dot(n, x, y);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t i1 = std::min(rows, i0 + kTile);
      const std::size_t j1 = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

#define SAM3D_INSTANTIATE(T)                                                                      \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, \
                        std::size_t, T*, std::size_t, bool);                                    \
  template void axpy<T>(std::size_t, T, const T*, T*);                                          \
  template T dot<T>(std::size_t, const T*, const T*);                                           \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);

SAM3D_INSTANTIATE(float)
SAM3D_INSTANTIATE(double)
#undef SAM3D_INSTANTIATE

}  // namespace sam3d::kernels
