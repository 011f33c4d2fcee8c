#include "rvec/qr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rvec {

std::vector<double> PivotedQr::diagonal_magnitudes() const {
  std::vector<double> out(r.rows());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::abs(r(j, j));
  return out;
}

PivotedQr householder_qr_pivoted(const Matrix& input) {
  const std::size_t rows = input.rows(), cols = input.cols();
  const std::size_t steps = std::min(rows, cols);
  Matrix a = input;
  std::vector<std::size_t> perm(cols);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<Vector> reflectors(steps);

  auto tail_norm2 = [&](std::size_t col, std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < rows; ++i) s += a(i, col) * a(i, col);
    return s;
  };

  for (std::size_t j = 0; j < steps; ++j) {
    // Pivot: remaining column with the largest trailing norm (first on ties).
    // Norms are recomputed rather than downdated; the matrices here are small.
    std::size_t best = j;
    double best_norm = tail_norm2(j, j);
    for (std::size_t c = j + 1; c < cols; ++c) {
      const double n2 = tail_norm2(c, j);
      if (n2 > best_norm) {
        best = c;
        best_norm = n2;
      }
    }
    if (best != j) {
      for (std::size_t i = 0; i < rows; ++i) std::swap(a(i, j), a(i, best));
      std::swap(perm[j], perm[best]);
    }

    const double xnorm = std::sqrt(best_norm);
    Vector v(rows - j, 0.0);
    if (xnorm == 0.0) continue;  // identity reflector, R(j, j) = 0
    const double alpha = a(j, j) >= 0.0 ? -xnorm : xnorm;
    for (std::size_t i = j; i < rows; ++i) v[i - j] = a(i, j);
    v[0] -= alpha;
    const double vnorm2 = squared_norm(v);
    if (vnorm2 == 0.0) continue;

    for (std::size_t c = j; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t i = j; i < rows; ++i) s += v[i - j] * a(i, c);
      const double f = 2.0 * s / vnorm2;
      for (std::size_t i = j; i < rows; ++i) a(i, c) -= f * v[i - j];
    }
    for (std::size_t i = j + 1; i < rows; ++i) a(i, j) = 0.0;
    a(j, j) = alpha;
    reflectors[j] = std::move(v);
  }

  PivotedQr out;
  out.perm = std::move(perm);
  out.r = Matrix(steps, cols);
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t c = i; c < cols; ++c) out.r(i, c) = a(i, c);

  // Q = H_0 H_1 ... H_{steps-1} applied to the first `steps` columns of I.
  out.q = Matrix(rows, steps);
  for (std::size_t i = 0; i < steps; ++i) out.q(i, i) = 1.0;
  for (std::size_t jj = steps; jj-- > 0;) {
    const Vector& v = reflectors[jj];
    if (v.empty()) continue;
    const double vnorm2 = squared_norm(v);
    if (vnorm2 == 0.0) continue;
    for (std::size_t c = 0; c < steps; ++c) {
      double s = 0.0;
      for (std::size_t i = jj; i < rows; ++i) s += v[i - jj] * out.q(i, c);
      const double f = 2.0 * s / vnorm2;
      for (std::size_t i = jj; i < rows; ++i) out.q(i, c) -= f * v[i - jj];
    }
  }
  return out;
}

}  // namespace rvec
