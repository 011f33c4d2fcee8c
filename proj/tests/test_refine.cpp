#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "rvec/container.hpp"
#include "rvec/planted.hpp"
#include "rvec/refine.hpp"

using namespace rvec;
using rvec::testing::kind_of;

namespace {

ReasoningSubspace subspace_of(std::initializer_list<Vector> cols) {
  return build_subspace_from_columns(Matrix::from_rows(std::vector<Vector>(cols)).transposed(),
                                     ReasoningType::deductive);
}

struct PlantedSetup {
  PlantedConfig pc;
  PerType<ContrastDataset> data;
  PerType<ReasoningVector> naive;
  PerType<ReasoningSubspace> subspaces;
};

/// Planted data, naive probes, and subspaces spanned by the planted shared and
/// specific directions plus one random direction each.
PlantedSetup planted_setup() {
  PlantedSetup s;
  s.pc = PlantedConfig::standard(32, 0.05, 200, 4, 5);
  s.data = planted_generate(s.pc);
  std::mt19937_64 rng(50);
  ProbeTrainConfig pcfg;
  pcfg.seed = 7;
  for (std::size_t r = 0; r < 3; ++r) {
    s.naive[r] = train_probe(s.data[r], pcfg).vector;
    Matrix v(32, 3);
    v.set_column(0, s.pc.shared_dir);
    v.set_column(1, s.pc.specific_dirs[r]);
    v.set_column(2, testing::random_vector(32, rng));
    s.subspaces[r] = build_subspace_from_columns(v, kReasoningTypes[r]);
  }
  return s;
}

}  // namespace

TEST_CASE("loss_com examples") {
  CHECK(loss_com({Vector{1, 2}, Vector{1, 2}, Vector{1, 2}}) == doctest::Approx(-6.0).epsilon(1e-15));
  CHECK(loss_com({Vector{1, 0, 0}, Vector{0, 2, 0}, Vector{0, 0, 3}}) == 0.0);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(loss_com({Vector{1, 0}, Vector{0, 1}, Vector{s, s}}) ==
        doctest::Approx(-2.0 * std::sqrt(2.0)).epsilon(1e-15));
  CHECK(kind_of([] { loss_com({Vector{1, 0}, Vector{0, 0}, Vector{1, 1}}); }) == ErrorKind::ZeroNorm);
}

TEST_CASE("loss_com is invariant to positive rescaling of any vector") {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    PerType<Vector> t = {testing::random_vector(6, rng), testing::random_vector(6, rng),
                         testing::random_vector(6, rng)};
    const double base = loss_com(t);
    // Powers of two scale every product exactly.
    const double scale = std::ldexp(1.0, static_cast<int>(rng() % 21) - 10);
    for (double& x : t[trial % 3]) x *= scale;
    CHECK(loss_com(t) == base);
    CHECK(base >= -6.0);
    CHECK(base <= 6.0);
  }
}

TEST_CASE("loss_sub examples") {
  const ReasoningSubspace e1 = subspace_of({Vector{1, 0, 0}});
  CHECK(loss_sub(Vector{3, 4, 0}, e1) == 16.0);
  CHECK(loss_sub(Vector{0, 4, -2}, e1) == 20.0);

  std::mt19937_64 rng(52);
  const ReasoningSubspace u = build_subspace_from_columns(testing::random_matrix(7, 3, rng),
                                                          ReasoningType::deductive);
  CHECK(loss_sub(u.basis.column(1), u) < 1e-12);
  CHECK(kind_of([&] { loss_sub(Vector{1, 2}, u); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("loss_sub satisfies the Pythagoras identity") {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + rng() % 31, k = 1 + rng() % std::min<std::size_t>(d, 6);
    const ReasoningSubspace u = build_subspace_from_columns(testing::random_matrix(d, k, rng),
                                                            ReasoningType::deductive);
    const Vector theta = testing::random_vector(d, rng, 3.0);
    const Vector p = project_onto(theta, u);
    const double lhs = dot(theta, theta), rhs = loss_sub(theta, u) + dot(p, p);
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, lhs));
    CHECK(loss_sub(theta, u) >= 0.0);
  }
}

TEST_CASE("total_loss reductions and breakdown") {
  std::mt19937_64 rng(54);
  oracle::RefineInstance inst = oracle::random_refine_instance(rng);
  const RefineBatch batch = inst.batch();

  const LossBreakdown plain = total_loss(inst.params, batch, inst.subspaces, 0.0, 0.0);
  double bce_sum = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    bce_sum += bce_loss(inst.params.theta[r], inst.params.bias[r], inst.data[r]);
  CHECK(plain.total == doctest::Approx(bce_sum).epsilon(1e-14));

  const LossBreakdown full = total_loss(inst.params, batch, inst.subspaces, 0.7, 0.3);
  const double parts = full.probe[0] + full.probe[1] + full.probe[2] + 0.7 * full.com +
                       0.3 * (full.sub[0] + full.sub[1] + full.sub[2]);
  CHECK(std::abs(full.total - parts) <= 1e-12);
}

TEST_CASE("total_loss isolates the complementary term for fitted in-subspace probes") {
  // Each θ lies in its subspace and separates its data with a huge margin.
  const Vector a = {1, 0}, b = {0, 1}, c = {1, 1};
  PerType<LabeledSet> data;
  PerType<ReasoningSubspace> subs;
  RefineParams p;
  const PerType<Vector> dirs = {a, b, c};
  for (std::size_t r = 0; r < 3; ++r) {
    Vector neg = dirs[r];
    for (double& x : neg) x = -x;
    data[r].x = Matrix::from_rows(std::vector<Vector>{dirs[r], neg});
    data[r].y = {1.0, 0.0};
    subs[r] = subspace_of({dirs[r]});
    p.theta[r] = dirs[r];
    for (double& x : p.theta[r]) x *= 1000.0;
    p.bias[r] = 0.0;
  }
  RefineBatch batch;
  for (std::size_t r = 0; r < 3; ++r) batch.data[r] = &data[r];
  const LossBreakdown l = total_loss(p, batch, subs, 0.1, 0.01);
  CHECK(l.total == doctest::Approx(0.1 * loss_com(p.theta)).epsilon(1e-12));
}

TEST_CASE("total objective gradient matches central finite differences") {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    oracle::RefineInstance inst = oracle::random_refine_instance(rng);
    const RefineBatch batch = inst.batch();
    auto loss = [&](const RefineParams& q) {
      return total_loss(q, batch, inst.subspaces, inst.lambda_com, inst.lambda_sub).total;
    };
    auto grad = [&](const RefineParams& q) {
      return total_gradient(q, batch, inst.subspaces, inst.lambda_com, inst.lambda_sub);
    };
    CHECK(oracle::max_gradient_error(inst.params, loss, grad) < 1e-5);
  }
}

TEST_CASE("loss_com and loss_sub gradients match central finite differences") {
  std::mt19937_64 rng(56);
  for (int trial = 0; trial < 50; ++trial) {
    oracle::RefineInstance inst = oracle::random_refine_instance(rng);
    auto com = [](const RefineParams& q) { return loss_com(q.theta); };
    auto com_grad = [](const RefineParams& q) {
      RefineParams g = q;
      loss_com_gradient(q.theta, g.theta);
      g.bias = {0.0, 0.0, 0.0};
      return g;
    };
    CHECK(oracle::max_gradient_error(inst.params, com, com_grad) < 1e-5);

    auto sub = [&](const RefineParams& q) {
      double s = 0.0;
      for (std::size_t r = 0; r < 3; ++r) s += loss_sub(q.theta[r], inst.subspaces[r]);
      return s;
    };
    auto sub_grad = [&](const RefineParams& q) {
      RefineParams g = q;
      for (std::size_t r = 0; r < 3; ++r) loss_sub_gradient(q.theta[r], inst.subspaces[r], g.theta[r]);
      g.bias = {0.0, 0.0, 0.0};
      return g;
    };
    CHECK(oracle::max_gradient_error(inst.params, sub, sub_grad) < 1e-5);
  }
}

TEST_CASE("refine config validation") {
  RefineConfig cfg;
  cfg.lambda_com = -1.0;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::ConfigError);
  cfg.lambda_com = 0.1;
  cfg.learning_rate = -1e-3;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::ConfigError);
}

TEST_CASE("refinement on planted data") {
  const PlantedSetup s = planted_setup();

  SUBCASE("zero learning rate and zero lambdas is a no-op") {
    RefineConfig cfg;
    cfg.lambda_com = 0.0;
    cfg.lambda_sub = 0.0;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    const RefineResult res = refine_vectors(s.naive, s.data, s.subspaces, cfg);
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(res.vectors[r].theta == s.naive[r].theta);
      CHECK(res.vectors[r].bias == s.naive[r].bias);
    }
  }

  SUBCASE("deterministic with a loss history per epoch") {
    RefineConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 8;
    const RefineResult a = refine_vectors(s.naive, s.data, s.subspaces, cfg);
    const RefineResult b = refine_vectors(s.naive, s.data, s.subspaces, cfg);
    CHECK(a.loss_history.size() == 5);
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(a.vectors[r].theta == b.vectors[r].theta);
      CHECK(a.vectors[r].provenance == Provenance::refined);
      CHECK(a.vectors[r].reasoning_type == kReasoningTypes[r]);
    }
    CHECK(std::isfinite(a.loss_history.back().loss.total));
  }

  SUBCASE("very large complementary weight collapses the vectors") {
    RefineConfig cfg;
    cfg.lambda_com = 100.0;
    cfg.lambda_sub = 0.0;
    cfg.seed = 8;
    const RefineResult res = refine_vectors(s.naive, s.data, s.subspaces, cfg);
    PerType<ReasoningVector> v = res.vectors;
    const Matrix c = cosine_matrix(v);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t q = r + 1; q < 3; ++q) CHECK(c(r, q) > 0.95);
  }

  SUBCASE("large subspace weight shrinks the out-of-subspace residual") {
    RefineConfig cfg;
    cfg.lambda_sub = 10.0;
    cfg.seed = 8;
    const RefineResult res = refine_vectors(s.naive, s.data, s.subspaces, cfg);
    for (std::size_t r = 0; r < 3; ++r)
      CHECK(loss_sub(res.vectors[r].theta, s.subspaces[r]) <
            loss_sub(s.naive[r].theta, s.subspaces[r]));
  }
}

TEST_CASE("loss history CSV layout") {
  std::vector<LossHistoryRow> rows(2);
  rows[0].epoch = 0;
  rows[1].epoch = 1;
  rows[1].loss.total = 0.5;
  const auto path = testing::scratch_dir("loss_csv") / "loss.csv";
  write_loss_history_csv(rows, path);
  const std::string text = read_text_file(path);
  CHECK(text.substr(0, text.find('\n')) ==
        "epoch,l_probe_d,l_probe_i,l_probe_a,l_com,l_sub_d,l_sub_i,l_sub_a,total");
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
