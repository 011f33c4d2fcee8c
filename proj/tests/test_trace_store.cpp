#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "rvec/container.hpp"
#include "rvec/error.hpp"
#include "rvec/trace_store.hpp"

using namespace rvec;
using rvec::testing::kind_of;
namespace fs = std::filesystem;

namespace {

ActivationTrace make_trace(const std::string& id, Variant variant, bool correct, const Matrix& acts,
                           ReasoningType type = ReasoningType::deductive) {
  ActivationTrace t;
  t.instance_id = id;
  t.reasoning_type = type;
  t.variant = variant;
  t.layer = 2;
  t.correct = correct;
  t.activations = acts;
  return t;
}

Matrix rows_of(std::initializer_list<Vector> rows) {
  return Matrix::from_rows(std::vector<Vector>(rows));
}

ActivationTrace random_trace(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  ActivationTrace t = make_trace("inst-" + std::to_string(rng() % 1000), Variant::mono, rng() % 2,
                                 testing::random_matrix(n, d, rng),
                                 kReasoningTypes[rng() % 3]);
  t.layer = static_cast<int>(rng() % 7);
  round_to_f32(t.activations.data());
  if (rng() % 2)
    for (std::size_t i = 0; i < n; ++i) t.token_ids.push_back(static_cast<std::uint32_t>(rng()));
  return t;
}

}  // namespace

TEST_CASE("mean_activation examples") {
  CHECK(mean_activation(make_trace("a", Variant::mono, true, rows_of({{1, 2}, {3, 4}}))) ==
        Vector{2, 3});
  const Vector v = {0.5, -1.25, 3};
  CHECK(mean_activation(make_trace("a", Variant::mono, true, rows_of({v}))) == v);
  CHECK(mean_activation(make_trace("a", Variant::mono, true, rows_of({v, v, v}))) == v);
}

TEST_CASE("mean_activation errors") {
  CHECK(kind_of([] { mean_activation(make_trace("a", Variant::mono, true, Matrix(0, 3))); }) ==
        ErrorKind::EmptyTrace);
  CHECK(kind_of([] {
          mean_activation(make_trace("a", Variant::mono, true, rows_of({{1, NAN}})));
        }) == ErrorKind::NonFinite);
  CHECK(kind_of([] {
          mean_activation(make_trace("a", Variant::mono, true, rows_of({{1, INFINITY}})));
        }) == ErrorKind::NonFinite);
}

TEST_CASE("mean_activation is invariant to row permutation") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 12, d = 1 + rng() % 9;
    // Small integers make every summation order exact.
    Matrix m(n, d);
    for (double& x : m.data()) x = static_cast<double>(static_cast<int>(rng() % 41) - 20);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix p(n, d);
    for (std::size_t i = 0; i < n; ++i) std::ranges::copy(m.row(perm[i]), p.row(i).begin());
    CHECK(mean_activation(make_trace("a", Variant::mono, true, m)) ==
          mean_activation(make_trace("a", Variant::mono, true, p)));
  }
}

TEST_CASE("build_contrast_pairs filter examples") {
  const Matrix m = rows_of({{1, 0}});
  std::vector<ActivationTrace> strong = {make_trace("i0", Variant::strong_prompt, true, m),
                                         make_trace("i1", Variant::strong_prompt, true, m),
                                         make_trace("i2", Variant::strong_prompt, false, m)};
  std::vector<ActivationTrace> weak = {make_trace("i0", Variant::weak_prompt, false, m),
                                       make_trace("i1", Variant::weak_prompt, true, m),
                                       make_trace("i2", Variant::weak_prompt, false, m)};
  const ContrastDataset ds = build_contrast_pairs(strong, weak);
  REQUIRE(ds.pairs.size() == 1);
  CHECK(ds.pairs[0].instance_id == "i0");
  CHECK(ds.d == 2);

  for (auto& w : weak) w.correct = false;
  for (auto& s : strong) s.correct = true;
  CHECK(build_contrast_pairs(strong, weak).pairs.size() == 3);

  for (auto& s : strong) s.correct = false;
  CHECK(kind_of([&] { build_contrast_pairs(strong, weak); }) == ErrorKind::NoValidPairs);
}

TEST_CASE("build_contrast_pairs uses per-run means and reports unmatched runs") {
  std::vector<ActivationTrace> strong = {
      make_trace("a", Variant::strong_prompt, true, rows_of({{1, 2}, {3, 4}})),
      make_trace("orphan", Variant::strong_prompt, true, rows_of({{0, 0}}))};
  std::vector<ActivationTrace> weak = {
      make_trace("a", Variant::weak_prompt, false, rows_of({{-1, 0}, {-3, 0}, {-5, 3}}))};
  const ContrastDataset ds = build_contrast_pairs(strong, weak);
  REQUIRE(ds.pairs.size() == 1);
  CHECK(ds.pairs[0].pos_mean == Vector{2, 3});
  CHECK(ds.pairs[0].neg_mean == Vector{-3, 1});
  CHECK(ds.unmatched == 1);
}

TEST_CASE("build_contrast_pairs errors") {
  std::vector<ActivationTrace> strong = {
      make_trace("a", Variant::strong_prompt, true, rows_of({{1, 2}}))};
  std::vector<ActivationTrace> weak = {
      make_trace("a", Variant::weak_prompt, false, rows_of({{1, 2, 3}}))};
  CHECK(kind_of([&] { build_contrast_pairs(strong, weak); }) == ErrorKind::DimensionMismatch);
  weak[0].activations = rows_of({{1, 2}});
  weak[0].variant = Variant::mono;
  CHECK(kind_of([&] { build_contrast_pairs(strong, weak); }) == ErrorKind::ConfigError);
}

TEST_CASE("pair count equals the number of (correct, incorrect) instances, exhaustively") {
  // Every assignment of (strong.correct, weak.correct) over four instances.
  const Matrix m = rows_of({{1}});
  for (unsigned mask = 0; mask < 256; ++mask) {
    std::vector<ActivationTrace> strong, weak;
    std::size_t expected = 0;
    for (unsigned i = 0; i < 4; ++i) {
      const bool s = mask >> (2 * i) & 1, w = mask >> (2 * i + 1) & 1;
      expected += s && !w;
      strong.push_back(make_trace("i" + std::to_string(i), Variant::strong_prompt, s, m));
      weak.push_back(make_trace("i" + std::to_string(i), Variant::weak_prompt, w, m));
    }
    if (expected == 0) {
      CHECK(kind_of([&] { build_contrast_pairs(strong, weak); }) == ErrorKind::NoValidPairs);
    } else {
      CHECK(build_contrast_pairs(strong, weak).pairs.size() == expected);
    }
  }
}

TEST_CASE("build_contrast_datasets groups by reasoning type") {
  const Matrix m = rows_of({{1, 1}});
  std::vector<ActivationTrace> runs;
  for (ReasoningType t : {ReasoningType::deductive, ReasoningType::abductive}) {
    runs.push_back(make_trace("x", Variant::strong_prompt, true, m, t));
    runs.push_back(make_trace("x", Variant::weak_prompt, false, m, t));
  }
  const auto sets = build_contrast_datasets(runs);
  CHECK(sets.size() == 2);
  CHECK(sets.count(ReasoningType::inductive) == 0);
  CHECK(sets.at(ReasoningType::abductive).reasoning_type == ReasoningType::abductive);
}

TEST_CASE("trace round-trip is the identity on every field") {
  std::mt19937_64 rng(11);
  const fs::path dir = testing::scratch_dir("trace_roundtrip");
  for (int trial = 0; trial < 40; ++trial) {
    const ActivationTrace t = random_trace(rng, 1 + rng() % 20, 1 + rng() % 17);
    const fs::path p = dir / "t.rvtr";
    write_trace(t, p);
    const ActivationTrace r = read_trace(p);
    CHECK(r.instance_id == t.instance_id);
    CHECK(r.reasoning_type == t.reasoning_type);
    CHECK(r.variant == t.variant);
    CHECK(r.layer == t.layer);
    CHECK(r.correct == t.correct);
    CHECK(r.token_ids == t.token_ids);
    CHECK(r.activations == t.activations);
    write_trace(r, dir / "u.rvtr");
    CHECK(read_text_file(p) == read_text_file(dir / "u.rvtr"));
  }
}

TEST_CASE("trace format errors") {
  std::mt19937_64 rng(12);
  const fs::path dir = testing::scratch_dir("trace_errors");
  const ActivationTrace t = random_trace(rng, 10, 4);
  const fs::path p = dir / "t.rvtr";
  write_trace(t, p);
  const std::string bytes = read_text_file(p);

  SUBCASE("wrong magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    write_text_file(p, bad);
    CHECK(kind_of([&] { read_trace(p); }) == ErrorKind::FormatError);
  }
  SUBCASE("header declares 10 rows, body has 9") {
    const std::size_t cut = 4 * 4 + (t.token_ids.empty() ? 0 : 4);
    write_text_file(p, bytes.substr(0, bytes.size() - cut));
    CHECK(kind_of([&] { read_trace(p); }) == ErrorKind::FormatError);
  }
  SUBCASE("version mismatch") {
    std::string bad = bytes;
    bad[4] = 2;
    write_text_file(p, bad);
    CHECK(kind_of([&] { read_trace(p); }) == ErrorKind::FormatError);
  }
  SUBCASE("trailing bytes") {
    write_text_file(p, bytes + "xxxx");
    CHECK(kind_of([&] { read_trace(p); }) == ErrorKind::FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_trace(dir / "absent.rvtr"), Error); }
}

TEST_CASE("token ids must match the row count") {
  ActivationTrace t = make_trace("a", Variant::mono, true, rows_of({{1}, {2}}));
  t.token_ids = {7};
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::DimensionMismatch);
  CHECK_THROWS_AS(write_trace(t, testing::scratch_dir("trace_ids") / "t.rvtr"), Error);
}

TEST_CASE("trace dataset and contrast dataset round-trips") {
  std::mt19937_64 rng(13);
  const fs::path dir = testing::scratch_dir("datasets");
  std::vector<ActivationTrace> traces;
  for (int i = 0; i < 5; ++i) traces.push_back(random_trace(rng, 1 + i, 6));
  write_trace_dataset(dir / "ds", traces);
  const auto back = read_trace_dataset(dir / "ds");
  REQUIRE(back.size() == traces.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].instance_id == traces[i].instance_id);
    CHECK(back[i].activations == traces[i].activations);
  }

  ContrastDataset cd;
  cd.reasoning_type = ReasoningType::inductive;
  cd.d = 3;
  for (int i = 0; i < 4; ++i) {
    ContrastPair p{"p" + std::to_string(i), ReasoningType::inductive,
                   testing::random_vector(3, rng), testing::random_vector(3, rng)};
    round_to_f32(p.pos_mean);
    round_to_f32(p.neg_mean);
    cd.pairs.push_back(p);
  }
  write_contrast_dataset(cd, dir / "c.rvcd");
  const ContrastDataset r = read_contrast_dataset(dir / "c.rvcd");
  CHECK(r.reasoning_type == cd.reasoning_type);
  CHECK(r.d == 3);
  REQUIRE(r.pairs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.pairs[i].instance_id == cd.pairs[i].instance_id);
    CHECK(r.pairs[i].pos_mean == cd.pairs[i].pos_mean);
    CHECK(r.pairs[i].neg_mean == cd.pairs[i].neg_mean);
  }
  CHECK(r.positives().rows() == 4);
}
