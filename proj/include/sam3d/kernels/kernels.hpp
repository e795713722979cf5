#pragma once

// Data-parallel inner loops used by every layer: dense GEMM, axpy, dot.
//
// Each kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The variant is chosen once at startup from CPUID and can be
// overridden (tests, --isa flag). All GEMM variants accumulate each output
// element in ascending k order with fused multiply-add semantics on the
// vector path, so splitting the work across threads never changes a result.

#include <cstddef>
#include <string_view>

namespace sam3d::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa best_isa();
Isa active_isa();
/// Throws UnsupportedError when the CPU lacks the requested ISA.
void set_isa(Isa isa);

void set_num_threads(unsigned n);
unsigned num_threads();

/// C[m x n] = A[m x k] * B[k x n] (+ C when accumulate). Row-major with
/// leading dimensions lda, ldb, ldc.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

/// y += alpha * x
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

template <typename T>
T dot(std::size_t n, const T* x, const T* y);

/// Out-of-place transpose: dst[cols x rows] = src[rows x cols]^T.
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

// Per-ISA entry points, exposed for equivalence tests and benchmarks.
namespace scalar {
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
T dot(std::size_t n, const T* x, const T* y);
}  // namespace scalar

namespace avx2 {
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
T dot(std::size_t n, const T* x, const T* y);
}  // namespace avx2

}  // namespace sam3d::kernels
