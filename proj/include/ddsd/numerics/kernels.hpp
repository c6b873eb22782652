#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop kernels behind every dense op. Each backend fills the same
// table; the scalar table is the reference every other backend is tested
// against. Selection happens once at startup from CPUID, and can be forced
// with DDSD_KERNELS=scalar|avx2 or select_backend().

namespace ddsd::num::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  Backend backend;
  const char* name;
  // sum_i x[i]*y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += alpha*x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] += a[i]*b[i]
  void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);
  // y[j] += sum_r alpha[r]*x[r*ldx + j] for r < rows; the gemm row update
  void (*axpy_rows)(const double* alpha, const double* x, std::size_t ldx, std::size_t rows,
                    double* y, std::size_t n);
  // c[m×n] += a[m×k]·b[k×n], all row-major with the given leading dimensions
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table() noexcept;

const KernelTable& active() noexcept;
Backend active_backend() noexcept;
std::string_view backend_name(Backend b) noexcept;

// Returns false (and leaves the selection unchanged) if the backend is unavailable.
bool select_backend(Backend b) noexcept;

}  // namespace ddsd::num::kernels
