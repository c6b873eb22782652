#include "ddsd/numerics/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddsd/errors.hpp"
#include "ddsd/numerics/kernels.hpp"

namespace ddsd::num {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

void gemm_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) {
    throw DimensionError("matmul shape mismatch: " + shape(a) + " * " + shape(b) + " -> " +
                         shape(out));
  }
  kernels::active().gemm(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(),
                         out.data(), out.cols());
}

void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw DimensionError("matmul(at, b) shape mismatch: " + shape(a) + "^T * " + shape(b));
  }
  const Matrix at = a.transposed();
  kernels::active().gemm(at.rows(), b.cols(), at.cols(), at.data(), at.cols(), b.data(), b.cols(),
                         out.data(), out.cols());
}

void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) {
    throw DimensionError("matmul(a, bt) shape mismatch: " + shape(a) + " * " + shape(b) + "^T");
  }
  const Matrix bt = b.transposed();
  kernels::active().gemm(a.rows(), bt.cols(), a.cols(), a.data(), a.cols(), bt.data(), bt.cols(),
                         out.data(), out.cols());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  gemm_acc(a, b, out);
  return out;
}

double frobenius_sq(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.values()) acc += v * v;
  return acc;
}

}  // namespace ddsd::num
