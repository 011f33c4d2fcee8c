#include "rvec/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "rvec/error.hpp"
#include "rvec/kernels.hpp"

namespace rvec {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<Vector> copy;
  for (const auto& r : rows) copy.emplace_back(r);
  return from_rows(copy);
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == m.cols(), ErrorKind::DimensionMismatch, "ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  require(values.size() == rows_, ErrorKind::DimensionMismatch, "column length");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::DimensionMismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  require(na > 0.0 && nb > 0.0, ErrorKind::ZeroNorm, "cosine of a zero vector");
  return dot(a, b) / (na * nb);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), ErrorKind::DimensionMismatch, "axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector scaled(std::span<const double> x, double alpha) {
  Vector out(x.begin(), x.end());
  for (double& v : out) v *= alpha;
  return out;
}

Vector add(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::DimensionMismatch, "add: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vector subtract(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::DimensionMismatch, "subtract: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorKind::DimensionMismatch, "matmul: inner dimension");
  Matrix out(a.rows(), b.cols());
  kernels::matmul(a, b, out);
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorKind::DimensionMismatch, "matmul_bt: inner dimension");
  Matrix out(a.rows(), b.rows());
  kernels::matmul_bt(a, b, out);
  return out;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  require(m.cols() == x.size(), ErrorKind::DimensionMismatch, "matvec: dimension");
  Vector out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
  return out;
}

Vector matvec_t(const Matrix& m, std::span<const double> x) {
  require(m.rows() == x.size(), ErrorKind::DimensionMismatch, "matvec_t: dimension");
  Vector out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(x[r], m.row(r), out);
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::DimensionMismatch,
          "max_abs_diff: shape");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

void round_to_f32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace rvec
