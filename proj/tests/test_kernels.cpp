#include <cmath>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "sam3d/kernels/kernels.hpp"
#include "test_util.hpp"

using namespace sam3d;
namespace k = sam3d::kernels;

namespace {

template <typename T>
std::vector<T> reference_gemm(std::size_t m, std::size_t n, std::size_t kk, const std::vector<T>& a,
                              const std::vector<T>& b, const std::vector<T>& c0, bool acc) {
  std::vector<T> c(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = acc ? c0[i * n + j] : 0.0L;
      for (std::size_t p = 0; p < kk; ++p) s += static_cast<long double>(a[i * kk + p]) * b[p * n + j];
      c[i * n + j] = static_cast<T>(s);
    }
  }
  return c;
}

template <typename T>
std::vector<T> randv(std::size_t n, std::uint64_t seed) {
  return test::random_tensor<T>({n}, seed).vec();
}

template <typename T>
void check_close(const std::vector<T>& got, const std::vector<T>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    REQUIRE(std::abs(static_cast<double>(got[i]) - want[i]) <= tol * (1.0 + std::abs(static_cast<double>(want[i]))));
  }
}

struct IsaGuard {
  k::Isa saved = k::active_isa();
  unsigned threads = k::num_threads();
  ~IsaGuard() {
    k::set_isa(saved);
    k::set_num_threads(threads);
  }
};

const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> kShapes = {
    {1, 1, 1}, {5, 7, 3}, {6, 16, 1}, {7, 17, 9}, {13, 33, 300}, {64, 513, 70}, {3, 1030, 260}, {37, 5, 1}};

}  // namespace

TEST_CASE_TEMPLATE("scalar gemm matches an extended-precision oracle", T, float, double) {
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-12;
  for (auto [m, n, kk] : kShapes) {
    const auto a = randv<T>(m * kk, 1), b = randv<T>(kk * n, 2), c0 = randv<T>(m * n, 3);
    for (bool acc : {false, true}) {
      std::vector<T> c = c0;
      k::scalar::gemm<T>(m, n, kk, a.data(), kk, b.data(), n, c.data(), n, acc);
      check_close(c, reference_gemm(m, n, kk, a, b, c0, acc), tol * std::sqrt(static_cast<double>(kk)));
    }
  }
}

TEST_CASE_TEMPLATE("avx2 kernels agree with the scalar reference", T, float, double) {
  if (!k::isa_supported(k::Isa::kAvx2)) return;
  const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-13;
  for (auto [m, n, kk] : kShapes) {
    const auto a = randv<T>(m * kk, 4), b = randv<T>(kk * n, 5), c0 = randv<T>(m * n, 6);
    for (bool acc : {false, true}) {
      std::vector<T> cs = c0, cv = c0;
      k::scalar::gemm<T>(m, n, kk, a.data(), kk, b.data(), n, cs.data(), n, acc);
      k::avx2::gemm<T>(m, n, kk, a.data(), kk, b.data(), n, cv.data(), n, acc);
      check_close(cv, cs, tol * std::sqrt(static_cast<double>(kk)));
    }
  }
  for (std::size_t n : {0u, 1u, 7u, 8u, 33u, 1000u}) {
    const auto x = randv<T>(n, 7), y0 = randv<T>(n, 8);
    std::vector<T> ys = y0, yv = y0;
    k::scalar::axpy<T>(n, T(0.37), x.data(), ys.data());
    k::avx2::axpy<T>(n, T(0.37), x.data(), yv.data());
    check_close(yv, ys, tol);
    const double ds = k::scalar::dot<T>(n, x.data(), y0.data());
    const double dv = k::avx2::dot<T>(n, x.data(), y0.data());
    CHECK(std::abs(ds - dv) <= tol * std::sqrt(static_cast<double>(n) + 1) * (1.0 + std::abs(ds)));
  }
}

TEST_CASE("gemm honours leading dimensions") {
  IsaGuard guard;
  for (k::Isa isa : {k::Isa::kScalar, k::Isa::kAvx2}) {
    if (!k::isa_supported(isa)) continue;
    k::set_isa(isa);
    const std::size_t m = 9, n = 19, kk = 11, lda = 14, ldb = 23, ldc = 21;
    const auto a = randv<double>(m * lda, 9), b = randv<double>(kk * ldb, 10);
    std::vector<double> c(m * ldc, -7.0);
    k::gemm<double>(m, n, kk, a.data(), lda, b.data(), ldb, c.data(), ldc, false);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < ldc; ++j) {
        if (j >= n) {
          REQUIRE(c[i * ldc + j] == -7.0);
          continue;
        }
        double s = 0.0;
        for (std::size_t p = 0; p < kk; ++p) s += a[i * lda + p] * b[p * ldb + j];
        REQUIRE(c[i * ldc + j] == doctest::Approx(s).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("thread count never changes a gemm result") {
  IsaGuard guard;
  const std::size_t m = 150, n = 700, kk = 300;
  const auto a = randv<float>(m * kk, 11), b = randv<float>(kk * n, 12);
  for (k::Isa isa : {k::Isa::kScalar, k::Isa::kAvx2}) {
    if (!k::isa_supported(isa)) continue;
    k::set_isa(isa);
    k::set_num_threads(1);
    std::vector<float> c1(m * n);
    k::gemm<float>(m, n, kk, a.data(), kk, b.data(), n, c1.data(), n, false);
    for (unsigned t : {2u, 3u, 8u}) {
      k::set_num_threads(t);
      std::vector<float> ct(m * n);
      k::gemm<float>(m, n, kk, a.data(), kk, b.data(), n, ct.data(), n, false);
      CHECK(ct == c1);
    }
  }
}

TEST_CASE("transpose") {
  const auto src = randv<float>(5 * 9, 13);
  std::vector<float> dst(45), back(45);
  k::transpose<float>(5, 9, src.data(), dst.data());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 9; ++j) CHECK(dst[j * 5 + i] == src[i * 9 + j]);
  k::transpose<float>(9, 5, dst.data(), back.data());
  CHECK(back == src);
}

TEST_CASE("isa selection") {
  IsaGuard guard;
  CHECK(k::isa_supported(k::Isa::kScalar));
  CHECK(k::isa_name(k::Isa::kScalar) == "scalar");
  k::set_isa(k::Isa::kScalar);
  CHECK(k::active_isa() == k::Isa::kScalar);
  if (!k::isa_supported(k::Isa::kAvx2)) {
    CHECK_THROWS_AS(k::set_isa(k::Isa::kAvx2), UnsupportedError);
  }
}
