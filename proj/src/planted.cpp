#include "rvec/planted.hpp"

#include <cmath>
#include <numeric>
#include <cstdio>
#include <random>

#include "rvec/batching.hpp"
#include "rvec/error.hpp"

namespace rvec {

namespace {

constexpr double kDirTol = 1e-9;

/// Modified Gram–Schmidt with one re-orthogonalization pass.
std::vector<Vector> orthonormal_frame(std::size_t d, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> out;
  while (out.size() < k) {
    Vector v(d);
    for (double& x : v) x = normal(rng);
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& u : out) axpy(-dot(u, v), u, v);
    const double n = norm(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

void PlantedConfig::validate() const {
  require(d >= 4, ErrorKind::ConfigError, "planted.d must be >= 4");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorKind::ConfigError,
          "planted.noise_sigma must be finite and >= 0");
  require(n_instances >= 1, ErrorKind::ConfigError, "planted.n_instances must be >= 1");
  std::array<const Vector*, 4> dirs = {&shared_dir, &specific_dirs[0], &specific_dirs[1],
                                       &specific_dirs[2]};
  for (const Vector* v : dirs) {
    require(v->size() == d, ErrorKind::DimensionMismatch, "planted direction dimension");
    require(std::abs(norm(*v) - 1.0) <= kDirTol, ErrorKind::ConfigError,
            "planted directions must be unit norm");
  }
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j)
      require(std::abs(dot(*dirs[i], *dirs[j])) <= kDirTol, ErrorKind::ConfigError,
              "planted directions must be mutually orthogonal");
}

PlantedConfig PlantedConfig::standard(std::size_t d, double noise_sigma, std::size_t n_instances,
                                      std::uint64_t seed, std::uint64_t direction_seed) {
  require(d >= 4, ErrorKind::ConfigError, "planted.d must be >= 4");
  std::mt19937_64 rng(direction_seed);
  auto frame = orthonormal_frame(d, 4, rng);
  PlantedConfig cfg;
  cfg.d = d;
  cfg.shared_dir = frame[0];
  for (std::size_t r = 0; r < 3; ++r) cfg.specific_dirs[r] = frame[r + 1];
  cfg.noise_sigma = noise_sigma;
  cfg.n_instances = n_instances;
  cfg.seed = seed;
  return cfg;
}

std::array<ContrastDataset, 3> planted_generate(const PlantedConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> coef(0.5, 1.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto noisy = [&](Vector& v) {
    for (double& x : v) x += cfg.noise_sigma * noise(rng);
  };

  std::array<ContrastDataset, 3> out;
  for (ReasoningType type : kReasoningTypes) {
    const std::size_t r = index_of(type);
    ContrastDataset& ds = out[r];
    ds.reasoning_type = type;
    ds.d = cfg.d;
    for (std::size_t i = 0; i < cfg.n_instances; ++i) {
      ContrastPair p;
      char id[48];
      std::snprintf(id, sizeof id, "planted-%.3s-%04zu", std::string(to_string(type)).c_str(), i);
      p.instance_id = id;
      p.reasoning_type = type;
      const double cs = coef(rng);
      const double cr = coef(rng);
      p.pos_mean.assign(cfg.d, 0.0);
      axpy(cs, cfg.shared_dir, p.pos_mean);
      axpy(cr, cfg.specific_dirs[r], p.pos_mean);
      noisy(p.pos_mean);
      p.neg_mean.assign(cfg.d, 0.0);
      noisy(p.neg_mean);
      ds.pairs.push_back(std::move(p));
    }
  }
  return out;
}

SparseDictionaryData sparse_dictionary_data(std::size_t d, std::size_t n_atoms, std::size_t n,
                                            std::size_t active, double noise_sigma,
                                            std::uint64_t seed) {
  require(d >= 1 && n_atoms >= 1 && n >= 1, ErrorKind::ConfigError, "sparse data dimensions");
  require(active >= 1 && active <= n_atoms, ErrorKind::ConfigError,
          "active atoms must be in [1, n_atoms]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> coef(0.5, 1.5);

  SparseDictionaryData out;
  out.dictionary = Matrix(d, n_atoms);
  for (std::size_t j = 0; j < n_atoms; ++j) {
    Vector col(d);
    for (double& x : col) x = normal(rng);
    const double len = norm(col);
    for (double& x : col) x /= len;
    out.dictionary.set_column(j, col);
  }
  out.rows = Matrix(n, d);
  std::vector<std::size_t> atoms(n_atoms);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(atoms.begin(), atoms.end(), std::size_t{0});
    shuffle_indices(atoms, rng);
    auto row = out.rows.row(i);
    for (std::size_t a = 0; a < active; ++a) {
      const double c = coef(rng);
      for (std::size_t k = 0; k < d; ++k) row[k] += c * out.dictionary(k, atoms[a]);
    }
    for (double& x : row) x += noise_sigma * normal(rng);
  }
  return out;
}

nlohmann::json planted_to_json(const PlantedConfig& cfg) {
  nlohmann::json j = {{"d", cfg.d},
                      {"noise_sigma", cfg.noise_sigma},
                      {"n_instances", cfg.n_instances},
                      {"seed", cfg.seed},
                      {"shared_dir", cfg.shared_dir}};
  for (ReasoningType t : kReasoningTypes)
    j["specific_dirs"][std::string(to_string(t))] = cfg.specific_dirs[index_of(t)];
  return j;
}

}  // namespace rvec
