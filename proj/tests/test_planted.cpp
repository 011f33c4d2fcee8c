#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "rvec/planted.hpp"

using namespace rvec;
using rvec::testing::kind_of;

TEST_CASE("standard planted directions are orthonormal") {
  const PlantedConfig pc = PlantedConfig::standard(32, 0.05, 200, 4, 5);
  CHECK_NOTHROW(pc.validate());
  CHECK(std::abs(norm(pc.shared_dir) - 1.0) < 1e-12);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(std::abs(norm(pc.specific_dirs[r]) - 1.0) < 1e-12);
    CHECK(std::abs(dot(pc.shared_dir, pc.specific_dirs[r])) < 1e-12);
    for (std::size_t s = r + 1; s < 3; ++s)
      CHECK(std::abs(dot(pc.specific_dirs[r], pc.specific_dirs[s])) < 1e-12);
  }
}

TEST_CASE("planted validation rejects bad directions") {
  PlantedConfig pc = PlantedConfig::standard(8, 0.05, 10, 1, 2);
  SUBCASE("non-unit") {
    pc.shared_dir[0] += 1e-6;
    CHECK(kind_of([&] { pc.validate(); }) == ErrorKind::ConfigError);
  }
  SUBCASE("not orthogonal") {
    pc.specific_dirs[1] = pc.specific_dirs[0];
    CHECK(kind_of([&] { pc.validate(); }) == ErrorKind::ConfigError);
  }
  SUBCASE("negative noise") {
    pc.noise_sigma = -1.0;
    CHECK_THROWS_AS(pc.validate(), Error);
  }
}

TEST_CASE("zero noise puts every positive mean in its planted span") {
  const PlantedConfig pc = PlantedConfig::standard(12, 0.0, 50, 3, 4);
  const auto data = planted_generate(pc);
  for (std::size_t r = 0; r < 3; ++r)
    for (const ContrastPair& p : data[r].pairs) {
      const double cs = dot(p.pos_mean, pc.shared_dir), cr = dot(p.pos_mean, pc.specific_dirs[r]);
      CHECK(cs >= 0.5 - 1e-12);
      CHECK(cs <= 1.5 + 1e-12);
      CHECK(cr >= 0.5 - 1e-12);
      CHECK(cr <= 1.5 + 1e-12);
      Vector resid = p.pos_mean;
      axpy(-cs, pc.shared_dir, resid);
      axpy(-cr, pc.specific_dirs[r], resid);
      CHECK(norm(resid) < 1e-12);
      CHECK(norm(p.neg_mean) == 0.0);
    }
}

TEST_CASE("planted generation is deterministic and sized by n_instances") {
  const PlantedConfig pc = PlantedConfig::standard(16, 0.05, 100, 3, 4);
  const auto a = planted_generate(pc), b = planted_generate(pc);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(a[r].pairs.size() == 100);
    CHECK(a[r].reasoning_type == kReasoningTypes[r]);
    CHECK(a[r].positives() == b[r].positives());
    CHECK(a[r].negatives() == b[r].negatives());
  }
  PlantedConfig other = pc;
  other.seed = 99;
  CHECK(planted_generate(other)[0].positives() != a[0].positives());
}

TEST_CASE("sparse dictionary data has unit atoms") {
  const SparseDictionaryData s = sparse_dictionary_data(16, 32, 50, 3, 0.0, 1);
  CHECK(s.rows.rows() == 50);
  CHECK(s.rows.cols() == 16);
  for (std::size_t j = 0; j < 32; ++j) CHECK(std::abs(norm(s.dictionary.column(j)) - 1.0) < 1e-12);
}
