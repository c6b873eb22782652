// AVX2+FMA kernels. Compiled with -mavx2 -mfma; only reached after the
// runtime CPU check in kernels.cpp succeeds.

#include <immintrin.h>

#include "ddsd/numerics/kernels.hpp"

namespace ddsd::num::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul_acc(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

// Keeps a 16-wide strip of y in registers while sweeping all rows of x.
void axpy_rows(const double* alpha, const double* x, std::size_t ldx, std::size_t rows, double* y,
               std::size_t n) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256d y0 = _mm256_loadu_pd(y + j);
    __m256d y1 = _mm256_loadu_pd(y + j + 4);
    __m256d y2 = _mm256_loadu_pd(y + j + 8);
    __m256d y3 = _mm256_loadu_pd(y + j + 12);
    for (std::size_t r = 0; r < rows; ++r) {
      if (alpha[r] == 0.0) continue;
      const __m256d a = _mm256_set1_pd(alpha[r]);
      const double* xr = x + r * ldx + j;
      y0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(xr), y0);
      y1 = _mm256_fmadd_pd(a, _mm256_loadu_pd(xr + 4), y1);
      y2 = _mm256_fmadd_pd(a, _mm256_loadu_pd(xr + 8), y2);
      y3 = _mm256_fmadd_pd(a, _mm256_loadu_pd(xr + 12), y3);
    }
    _mm256_storeu_pd(y + j, y0);
    _mm256_storeu_pd(y + j + 4, y1);
    _mm256_storeu_pd(y + j + 8, y2);
    _mm256_storeu_pd(y + j + 12, y3);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d y0 = _mm256_loadu_pd(y + j);
    for (std::size_t r = 0; r < rows; ++r) {
      if (alpha[r] == 0.0) continue;
      y0 = _mm256_fmadd_pd(_mm256_set1_pd(alpha[r]), _mm256_loadu_pd(x + r * ldx + j), y0);
    }
    _mm256_storeu_pd(y + j, y0);
  }
  for (; j < n; ++j) {
    double acc = y[j];
    for (std::size_t r = 0; r < rows; ++r) {
      if (alpha[r] == 0.0) continue;
      acc += alpha[r] * x[r * ldx + j];
    }
    y[j] = acc;
  }
}

// 4×8 register-blocked micro-kernel; leftover rows fall back to axpy_rows.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    double* c0 = c + i * ldc;
    double* c1 = c0 + ldc;
    double* c2 = c1 + ldc;
    double* c3 = c2 + ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) {
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av = _mm256_set1_pd(a0[p]);
        r00 = _mm256_fmadd_pd(av, b0, r00);
        r01 = _mm256_fmadd_pd(av, b1, r01);
        av = _mm256_set1_pd(a1[p]);
        r10 = _mm256_fmadd_pd(av, b0, r10);
        r11 = _mm256_fmadd_pd(av, b1, r11);
        av = _mm256_set1_pd(a2[p]);
        r20 = _mm256_fmadd_pd(av, b0, r20);
        r21 = _mm256_fmadd_pd(av, b1, r21);
        av = _mm256_set1_pd(a3[p]);
        r30 = _mm256_fmadd_pd(av, b0, r30);
        r31 = _mm256_fmadd_pd(av, b1, r31);
      }
      _mm256_storeu_pd(c0 + j, r00);
      _mm256_storeu_pd(c0 + j + 4, r01);
      _mm256_storeu_pd(c1 + j, r10);
      _mm256_storeu_pd(c1 + j + 4, r11);
      _mm256_storeu_pd(c2 + j, r20);
      _mm256_storeu_pd(c2 + j + 4, r21);
      _mm256_storeu_pd(c3 + j, r30);
      _mm256_storeu_pd(c3 + j + 4, r31);
    }
    if (j < n) {
      for (std::size_t r = 0; r < 4; ++r) {
        const double* ar = a + (i + r) * lda;
        double* cr = c + (i + r) * ldc;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ar[p];
          const double* br = b + p * ldb;
          for (std::size_t jj = j; jj < n; ++jj) cr[jj] += av * br[jj];
        }
      }
    }
  }
  for (; i < m; ++i) axpy_rows(a + i * lda, b, ldb, k, c + i * ldc, n);
}

constexpr KernelTable kAvx2{Backend::Avx2, "avx2", dot, axpy, mul_acc, axpy_rows, gemm};

}  // namespace

const KernelTable* avx2_table_unchecked() noexcept { return &kAvx2; }

}  // namespace ddsd::num::kernels
