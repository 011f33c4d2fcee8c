#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "rvec/linalg.hpp"
#include "rvec/trace_store.hpp"

namespace rvec {

/// Synthetic contrast data with known structure: every positive mean is
/// c_s·shared + c_r·specific[r] + noise, every negative mean is pure noise.
struct PlantedConfig {
  std::size_t d = 32;
  Vector shared_dir;
  std::array<Vector, 3> specific_dirs;  // indexed by reasoning type
  double noise_sigma = 0.05;
  std::size_t n_instances = 200;
  std::uint64_t seed = 0;

  /// Unit norms within 1e-9 and mutual orthogonality within 1e-9.
  void validate() const;

  /// Directions drawn as an orthonormalized Gaussian frame under `direction_seed`.
  static PlantedConfig standard(std::size_t d, double noise_sigma, std::size_t n_instances,
                                std::uint64_t seed, std::uint64_t direction_seed);
};

std::array<ContrastDataset, 3> planted_generate(const PlantedConfig& cfg);

/// Rows h = Σ_j a_j·D_j over `active` random atoms of a random unit-norm
/// dictionary D (d × n_atoms), coefficients uniform in [0.5, 1.5]. Used to
/// check that the SAE recovers a sparse code.
struct SparseDictionaryData {
  Matrix dictionary;  // d × n_atoms
  Matrix rows;        // n × d
};
SparseDictionaryData sparse_dictionary_data(std::size_t d, std::size_t n_atoms, std::size_t n,
                                            std::size_t active, double noise_sigma,
                                            std::uint64_t seed);

nlohmann::json planted_to_json(const PlantedConfig& cfg);

}  // namespace rvec
