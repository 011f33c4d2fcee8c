#pragma once

// Data-parallel inner loops. Every kernel exists twice: a plain serial
// reference and an OpenMP version. Both write each output element from exactly
// one iteration with the same accumulation order, so their results are
// bit-identical; tests compare them directly and bench/ times them.
// Output matrices and spans must already have the result's shape.

#include <cstddef>
#include <functional>
#include <span>

#include "rvec/linalg.hpp"

namespace rvec::kernels {

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out);
/// out(i, :) = relu(w_enc · (h(i, :) − b_dec) + b_enc)
void sae_encode_rows(const Matrix& h, const Matrix& w_enc, std::span<const double> b_enc,
                     std::span<const double> b_dec, Matrix& out);
/// out(j) = mean_i z(i, j)²
void column_mean_of_squares(const Matrix& z, std::span<double> out);
/// out(j) = mean_i x(i, j)
void column_means(const Matrix& x, std::span<double> out);
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace serial

namespace omp {

void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out);
void sae_encode_rows(const Matrix& h, const Matrix& w_enc, std::span<const double> b_enc,
                     std::span<const double> b_dec, Matrix& out);
void column_mean_of_squares(const Matrix& z, std::span<double> out);
void column_means(const Matrix& x, std::span<double> out);
/// Runs body(i) for i in [0, n) across threads. Bodies must write disjoint state.
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace omp

bool openmp_enabled();

// Default dispatch used by the library.
inline void matmul(const Matrix& a, const Matrix& b, Matrix& out) { omp::matmul(a, b, out); }
inline void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out) { omp::matmul_bt(a, b, out); }
inline void sae_encode_rows(const Matrix& h, const Matrix& w_enc, std::span<const double> b_enc,
                            std::span<const double> b_dec, Matrix& out) {
  omp::sae_encode_rows(h, w_enc, b_enc, b_dec, out);
}
inline void column_mean_of_squares(const Matrix& z, std::span<double> out) {
  omp::column_mean_of_squares(z, out);
}
inline void column_means(const Matrix& x, std::span<double> out) { omp::column_means(x, out); }
inline void for_each_index(std::size_t n, const std::function<void(std::size_t)>& body) {
  omp::for_each_index(n, body);
}

}  // namespace rvec::kernels
