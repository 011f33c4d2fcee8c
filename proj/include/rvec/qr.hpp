#pragma once

#include <cstddef>
#include <vector>

#include "rvec/linalg.hpp"

namespace rvec {

/// Householder QR with column pivoting: A·P = Q·R.
struct PivotedQr {
  Matrix q;                        // rows(A) × r, orthonormal columns, r = min(rows, cols)
  Matrix r;                        // r × cols(A), upper triangular, pivoted column order
  std::vector<std::size_t> perm;   // perm[j] = original index of pivoted column j

  /// |R(j, j)| for j < r; non-increasing by construction.
  std::vector<double> diagonal_magnitudes() const;
};

PivotedQr householder_qr_pivoted(const Matrix& a);

}  // namespace rvec
