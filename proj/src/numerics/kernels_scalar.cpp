// Reference kernels. This translation unit is compiled with
// -fno-tree-vectorize so it stays a plain sequential baseline.

#include "ddsd/numerics/kernels.hpp"

namespace ddsd::num::kernels {
namespace {

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void mul_acc(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

void axpy_rows(const double* alpha, const double* x, std::size_t ldx, std::size_t rows, double* y,
               std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double a = alpha[r];
    if (a == 0.0) continue;
    const double* xr = x + r * ldx;
    for (std::size_t j = 0; j < n; ++j) y[j] += a * xr[j];
  }
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) axpy_rows(a + i * lda, b, ldb, k, c + i * ldc, n);
}

constexpr KernelTable kScalar{Backend::Scalar, "scalar", dot, axpy, mul_acc, axpy_rows, gemm};

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

}  // namespace ddsd::num::kernels
