#include "rvec/kernels.hpp"

namespace rvec::kernels::serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    for (std::size_t j = 0; j < m; ++j) o[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += aip * brow[j];
    }
  }
}

void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      out(i, j) = s;
    }
  }
}

void sae_encode_rows(const Matrix& h, const Matrix& w_enc, std::span<const double> b_enc,
                     std::span<const double> b_dec, Matrix& out) {
  const std::size_t n = h.rows(), d = h.cols(), m = w_enc.rows();
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) centered[c] = h(i, c) - b_dec[c];
    for (std::size_t j = 0; j < m; ++j) {
      const double* w = w_enc.row(j).data();
      double s = b_enc[j];
      for (std::size_t c = 0; c < d; ++c) s += w[c] * centered[c];
      out(i, j) = s > 0.0 ? s : 0.0;
    }
  }
}

void column_mean_of_squares(const Matrix& z, std::span<double> out) {
  const std::size_t n = z.rows(), m = z.cols();
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += z(i, j) * z(i, j);
    out[j] = n == 0 ? 0.0 : s / static_cast<double>(n);
  }
}

void column_means(const Matrix& x, std::span<double> out) {
  const std::size_t n = x.rows(), m = x.cols();
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x(i, j);
    out[j] = n == 0 ? 0.0 : s / static_cast<double>(n);
  }
}

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace rvec::kernels::serial
