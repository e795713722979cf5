#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sam3d/kernels/kernels.hpp"

namespace sam3d::kernels::avx2 {

namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr std::size_t kLanes = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg set1(float v) { return _mm256_set1_ps(v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static float hsum(Reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr std::size_t kLanes = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg set1(double v) { return _mm256_set1_pd(v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static double hsum(Reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
  }
};

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockN = 512;
constexpr std::size_t kRows = 6;

// R rows x CV vector registers of C, over a k-slice of length kk.
template <typename T, std::size_t R, std::size_t CV>
inline void micro(std::size_t kk, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool load_c) {
  using V = Vec<T>;
  typename V::Reg acc[R][CV];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < CV; ++v) {
      acc[r][v] = load_c ? V::load(c + r * ldc + v * V::kLanes) : V::zero();
    }
  }
  for (std::size_t p = 0; p < kk; ++p) {
    typename V::Reg bv[CV];
    for (std::size_t v = 0; v < CV; ++v) bv[v] = V::load(b + p * ldb + v * V::kLanes);
    for (std::size_t r = 0; r < R; ++r) {
      const typename V::Reg av = V::set1(a[r * lda + p]);
      for (std::size_t v = 0; v < CV; ++v) acc[r][v] = V::fmadd(av, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < CV; ++v) V::store(c + r * ldc + v * V::kLanes, acc[r][v]);
  }
}

// Columns narrower than one register: scalar fma keeps lane-identical rounding.
template <typename T>
inline void tail(std::size_t rows, std::size_t cols, std::size_t kk, const T* a, std::size_t lda,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc, bool load_c) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      T acc = load_c ? c[r * ldc + j] : T{0};
      for (std::size_t p = 0; p < kk; ++p) acc = std::fma(a[r * lda + p], b[p * ldb + j], acc);
      c[r * ldc + j] = acc;
    }
  }
}

// Full 2-register panels come from `packed` (kk x 2L per panel, contiguous);
// leftover columns read B in place.
template <typename T, std::size_t R>
inline void row_strip(std::size_t ncols, std::size_t kk, const T* a, std::size_t lda, const T* packed,
                      const T* b, std::size_t ldb, T* c, std::size_t ldc, bool load_c) {
  constexpr std::size_t L = Vec<T>::kLanes;
  std::size_t j = 0;
  for (; j + 2 * L <= ncols; j += 2 * L) {
    micro<T, R, 2>(kk, a, lda, packed + (j / (2 * L)) * kk * 2 * L, 2 * L, c + j, ldc, load_c);
  }
  for (; j + L <= ncols; j += L) micro<T, R, 1>(kk, a, lda, b + j, ldb, c + j, ldc, load_c);
  if (j < ncols) tail<T>(R, ncols - j, kk, a, lda, b + j, ldb, c + j, ldc, load_c);
}

template <typename T>
void dispatch_rows(std::size_t rows, std::size_t ncols, std::size_t kk, const T* a, std::size_t lda,
                   const T* packed, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool load_c) {
  switch (rows) {
    case 6: row_strip<T, 6>(ncols, kk, a, lda, packed, b, ldb, c, ldc, load_c); break;
    case 5: row_strip<T, 5>(ncols, kk, a, lda, packed, b, ldb, c, ldc, load_c); break;
    case 4: row_strip<T, 4>(ncols, kk, a, lda, packed, b, ldb, c, ldc, load_c); break;
    case 3: row_strip<T, 3>(ncols, kk, a, lda, packed, b, ldb, c, ldc, load_c); break;
    case 2: row_strip<T, 2>(ncols, kk, a, lda, packed, b, ldb, c, ldc, load_c); break;
    case 1: row_strip<T, 1>(ncols, kk, a, lda, packed, b, ldb, c, ldc, load_c); break;
    default: break;
  }
}

// Copies the full 2L-wide column panels of a kk x ncols block of B so that
// each panel is contiguous; rows of B that are a power-of-two apart would
// otherwise collide in the same cache sets.
template <typename T>
void pack_b(std::size_t kk, std::size_t ncols, const T* b, std::size_t ldb, T* out) {
  constexpr std::size_t W = 2 * Vec<T>::kLanes;
  for (std::size_t j = 0; j + W <= ncols; j += W) {
    for (std::size_t p = 0; p < kk; ++p) {
      const T* src = b + p * ldb + j;
      std::copy(src, src + W, out);
      out += W;
    }
  }
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    }
    return;
  }
  thread_local std::vector<T> packed;
  packed.resize(kBlockK * kBlockN);
  for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::size_t kk = std::min(kBlockK, k - p0);
    const bool load_c = accumulate || p0 > 0;
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t nn = std::min(kBlockN, n - j0);
      const T* bb = b + p0 * ldb + j0;
      pack_b(kk, nn, bb, ldb, packed.data());
      for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
        const std::size_t rows = std::min(kRows, m - i0);
        dispatch_rows<T>(rows, nn, kk, a + i0 * lda + p0, lda, packed.data(), bb, ldb, c + i0 * ldc + j0, ldc,
                         load_c);
      }
    }
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  const typename V::Reg av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + V::kLanes <= n; i += V::kLanes) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  using V = Vec<T>;
  typename V::Reg acc0 = V::zero();
  typename V::Reg acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * V::kLanes <= n; i += 2 * V::kLanes) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + V::kLanes), V::load(y + i + V::kLanes), acc1);
  }
  for (; i + V::kLanes <= n; i += V::kLanes) acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  T s = V::hsum(acc0) + V::hsum(acc1);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
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

}  // namespace sam3d::kernels::avx2
