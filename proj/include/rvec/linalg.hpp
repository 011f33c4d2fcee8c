#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace rvec {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix from_rows(const std::vector<Vector>& rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
/// Throws ZeroNorm when either argument has zero length.
double cosine(std::span<const double> a, std::span<const double> b);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector scaled(std::span<const double> x, double alpha);
Vector add(std::span<const double> a, std::span<const double> b);
Vector subtract(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> values);

/// a (n×k) · b (k×m)
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (n×k) · bᵀ where b is m×k
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// m (r×c) · x (c)
Vector matvec(const Matrix& m, std::span<const double> x);
/// mᵀ · x
Vector matvec_t(const Matrix& m, std::span<const double> x);

double max_abs_diff(const Matrix& a, const Matrix& b);

/// Rounds every entry through float32, matching what the on-disk containers hold.
void round_to_f32(std::span<double> values);

}  // namespace rvec
