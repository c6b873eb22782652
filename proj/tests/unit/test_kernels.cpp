#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "ddsd/numerics/kernels.hpp"
#include "ddsd/numerics/matrix.hpp"
#include "ddsd/rng.hpp"

using namespace ddsd;
namespace k = ddsd::num::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Tolerance for reassociated sums: a few ulps of the magnitude sum.
double tol(double mag) { return 1e-13 * (1.0 + mag); }

void check_table(const k::KernelTable& kt) {
  Rng rng(77);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 33u, 150u, 301u}) {
    auto x = random_vec(rng, n), y = random_vec(rng, n), z = random_vec(rng, n);
    double ref = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ref += x[i] * y[i];
      mag += std::abs(x[i] * y[i]);
    }
    CHECK(std::abs(kt.dot(x.data(), y.data(), n) - ref) <= tol(mag));

    auto y1 = y;
    kt.axpy(0.37, x.data(), y1.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - (y[i] + 0.37 * x[i])) <= tol(std::abs(y[i])));

    auto y2 = y;
    kt.mul_acc(x.data(), z.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y2[i] - (y[i] + x[i] * z[i])) <= tol(std::abs(y[i])));

    const std::size_t rows = 3, ldx = n + 2;
    auto alpha = random_vec(rng, rows);
    auto xs = random_vec(rng, rows * ldx);
    auto y3 = y;
    kt.axpy_rows(alpha.data(), xs.data(), ldx, rows, y3.data(), n);
    for (std::size_t j = 0; j < n; ++j) {
      double e = y[j], m = std::abs(y[j]);
      for (std::size_t r = 0; r < rows; ++r) {
        e += alpha[r] * xs[r * ldx + j];
        m += std::abs(alpha[r] * xs[r * ldx + j]);
      }
      CHECK(std::abs(y3[j] - e) <= tol(m));
    }
  }

  for (auto [m, n, kk] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {9, 17, 4}, {32, 150, 53}}) {
    const std::size_t lda = kk + 1, ldb = n + 3, ldc = n + 2;
    auto a = random_vec(rng, m * lda), b = random_vec(rng, kk * ldb), c = random_vec(rng, m * ldc);
    auto c1 = c;
    kt.gemm(m, n, kk, a.data(), lda, b.data(), ldb, c1.data(), ldc);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double e = c[i * ldc + j], mag = std::abs(e);
        for (std::size_t p = 0; p < kk; ++p) {
          e += a[i * lda + p] * b[p * ldb + j];
          mag += std::abs(a[i * lda + p] * b[p * ldb + j]);
        }
        CHECK(std::abs(c1[i * ldc + j] - e) <= tol(mag));
      }
      // padding columns untouched
      for (std::size_t j = n; j < ldc; ++j) CHECK(c1[i * ldc + j] == c[i * ldc + j]);
    }
  }
}

}  // namespace

TEST_CASE("scalar kernels match naive loops") { check_table(k::scalar_table()); }

TEST_CASE("avx2 kernels match naive loops") {
  const k::KernelTable* t = k::avx2_table();
  if (t == nullptr) {
    MESSAGE("AVX2 not available on this machine; only the scalar table was checked");
    return;
  }
  check_table(*t);
}

TEST_CASE("avx2 and scalar agree through matmul") {
  const k::KernelTable* t = k::avx2_table();
  if (t == nullptr) return;
  Rng rng(9);
  std::normal_distribution<double> d(0.0, 1.0);
  num::Matrix a(37, 61), b(61, 29);
  for (double& v : a.values()) v = d(rng);
  for (double& v : b.values()) v = d(rng);
  const auto before = k::active_backend();
  REQUIRE(k::select_backend(k::Backend::Scalar));
  num::Matrix ref = num::matmul(a, b);
  REQUIRE(k::select_backend(k::Backend::Avx2));
  num::Matrix fast = num::matmul(a, b);
  k::select_backend(before);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ref.values()[i] - fast.values()[i]) <= 1e-12);
}

TEST_CASE("backend names") {
  CHECK(k::backend_name(k::Backend::Scalar) == "scalar");
  CHECK(k::backend_name(k::Backend::Avx2) == "avx2");
  CHECK(k::scalar_table().backend == k::Backend::Scalar);
}
