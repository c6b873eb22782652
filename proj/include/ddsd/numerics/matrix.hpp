#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ddsd::num {

// Dense row-major matrix of doubles. Rank 2 only; vectors are 1×n rows.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  void fill(double value);
  bool all_finite() const noexcept;
  Matrix transposed() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out += a·b. Shapes are checked; throws DimensionError.
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& out);
// out += aᵀ·b
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
// out += a·bᵀ
void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);

Matrix matmul(const Matrix& a, const Matrix& b);

double frobenius_sq(const Matrix& m);

}  // namespace ddsd::num
