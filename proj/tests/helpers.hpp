#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

#include "rvec/error.hpp"
#include "rvec/linalg.hpp"

namespace rvec::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

/// |a − b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-6) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

/// A fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rvec_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// The ErrorKind thrown by `fn`; throws std::logic_error when nothing is thrown.
template <class F>
ErrorKind kind_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::logic_error("expected rvec::Error");
}

}  // namespace rvec::testing
