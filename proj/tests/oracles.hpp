#pragma once
// Independent reference implementations shared by the unit tests and the
// acceptance binary. Each one is written from the definition, not from the
// library code it checks.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "rvec/linalg.hpp"
#include "rvec/probes.hpp"
#include "rvec/refine.hpp"
#include "rvec/analysis.hpp"
#include "rvec/sae.hpp"
#include "rvec/steering.hpp"
#include "rvec/toy_model.hpp"

namespace rvec::oracle {

/// Classical Gram–Schmidt (two passes) dropping columns whose residual falls
/// below `tol` times the largest column norm.
inline Matrix gram_schmidt(const Matrix& v, double tol = 1e-8) {
  std::vector<Vector> basis;
  double scale = 0.0;
  for (std::size_t j = 0; j < v.cols(); ++j) scale = std::max(scale, norm(v.column(j)));
  for (std::size_t j = 0; j < v.cols(); ++j) {
    Vector w = v.column(j);
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& b : basis) axpy(-dot(b, w), b, w);
    const double n = norm(w);
    if (n <= tol * scale) continue;
    for (double& x : w) x /= n;
    basis.push_back(w);
  }
  Matrix q(v.rows(), basis.size());
  for (std::size_t j = 0; j < basis.size(); ++j) q.set_column(j, basis[j]);
  return q;
}

/// Best contiguous span of length ≤ max_len by exhaustive enumeration in
/// reverse order with every sum recomputed from scratch; ties prefer the
/// smaller start, then the shorter span.
struct SpanResult {
  std::size_t start = 0, end = 0;
  double score = 0.0;
};
inline SpanResult brute_force_span(const std::vector<double>& x, std::size_t max_len) {
  bool have = false;
  SpanResult best;
  for (std::size_t s = x.size(); s-- > 0;) {
    for (std::size_t e = x.size(); e-- > s;) {
      if (e - s + 1 > max_len) continue;
      double sum = 0.0;
      for (std::size_t i = s; i <= e; ++i) sum += x[i];
      const bool better = !have || sum > best.score ||
                          (sum == best.score && (s < best.start ||
                                                 (s == best.start && e < best.end)));
      if (better) best = {s, e, sum};
      have = true;
    }
  }
  return best;
}

/// A random small refinement problem: three labeled sets, three subspaces and
/// a parameter point.
struct RefineInstance {
  PerType<LabeledSet> data;
  PerType<ReasoningSubspace> subspaces;
  RefineParams params;
  double lambda_com = 0.1;
  double lambda_sub = 0.01;

  RefineBatch batch() const {
    RefineBatch b;
    for (std::size_t r = 0; r < 3; ++r) b.data[r] = &data[r];
    return b;
  }
};

inline RefineInstance random_refine_instance(std::mt19937_64& rng, std::size_t max_d = 16,
                                             std::size_t max_rank = 4) {
  RefineInstance inst;
  const std::size_t d = 2 + rng() % (max_d - 1);
  const std::size_t n = 2 + rng() % 8;
  std::uniform_real_distribution<double> lam(0.0, 2.0);
  inst.lambda_com = lam(rng);
  inst.lambda_sub = lam(rng);
  for (std::size_t r = 0; r < 3; ++r) {
    LabeledSet set;
    set.x = testing::random_matrix(2 * n, d, rng);
    set.y.assign(2 * n, 0.0);
    std::fill(set.y.begin(), set.y.begin() + static_cast<long>(n), 1.0);
    inst.data[r] = set;
    const std::size_t k = 1 + rng() % std::min(max_rank, d);
    inst.subspaces[r] = build_subspace_from_columns(testing::random_matrix(d, k, rng),
                                                    kReasoningTypes[r]);
    inst.params.theta[r] = testing::random_vector(d, rng);
    inst.params.bias[r] = testing::random_vector(1, rng)[0];
  }
  return inst;
}

/// Fourth-order central difference of `f` along one coordinate.
template <class F>
double central_difference(F&& f, double& x, double h) {
  const double x0 = x;
  x = x0 + 2 * h;
  const double p2 = f();
  x = x0 + h;
  const double p1 = f();
  x = x0 - h;
  const double m1 = f();
  x = x0 - 2 * h;
  const double m2 = f();
  x = x0;
  return (-p2 + 8 * p1 - 8 * m1 + m2) / (12 * h);
}

/// Largest relative error between the analytic gradient of `loss` and central
/// differences with step `h`, over every θ and b coordinate. `floor` bounds the
/// denominator for near-zero components.
template <class Loss, class Grad>
double max_gradient_error(const RefineParams& p, Loss&& loss, Grad&& grad, double h = 1e-3,
                          double floor = 1e-6) {
  const RefineParams g = grad(p);
  double worst = 0.0;
  RefineParams q = p;
  auto f = [&] { return loss(q); };
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j = 0; j < p.theta[r].size(); ++j)
      worst = std::max(worst,
                       testing::rel_err(g.theta[r][j], central_difference(f, q.theta[r][j], h), floor));
    worst = std::max(worst, testing::rel_err(g.bias[r], central_difference(f, q.bias[r], h), floor));
  }
  return worst;
}

/// A 2-layer, 2-head model (d = 4, vocab 8) whose every weight comes from a
/// fixed integer pattern rather than a random draw.
inline ToyModel hand_weighted_model() {
  ToyModelConfig c;
  c.d_model = 4;
  c.n_layers = 2;
  c.n_heads = 2;
  c.vocab = 8;
  c.max_seq = 16;
  ToyModel m = ToyModel::init(c);
  int salt = 0;
  m.for_each_tensor([&](const std::string& name, std::vector<double>& t) {
    ++salt;
    const bool gain = name.ends_with("_g");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const int v = static_cast<int>((i * 7 + static_cast<std::size_t>(salt) * 13) % 9) - 4;
      t[i] = gain ? 1.0 + v / 8.0 : v / 4.0;
    }
  });
  return m;
}

/// Per-cell rerun: for every head in layers spec.layer+1.., one full steered
/// forward pass with that head's generated-position outputs replaced by the
/// clean run's, scored directly from logits or hidden states.
inline Matrix patch_oracle(const ToyModel& model, const std::vector<std::uint32_t>& seq,
                           std::size_t prompt_len, const SteeringSpec& spec,
                           const PatchOptions& options, std::size_t answer_row) {
  const int n_layers = model.config.n_layers, n_heads = model.config.n_heads;
  const Vector v = spec.steering_vector();
  const std::vector<WriteHook> steer = {{HookPoint::resid(spec.layer), v, prompt_len}};
  const HookPoint final_resid = HookPoint::resid(n_layers - 1);
  const ForwardResult clean_logits = forward(model, seq);
  const ForwardResult steered = forward(model, seq, std::span(&final_resid, 1), steer);
  Matrix out(static_cast<std::size_t>(n_layers - spec.layer - 1),
             static_cast<std::size_t>(n_heads));
  for (int l = spec.layer + 1; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      const HookPoint head = HookPoint::head_out(l, h);
      const Matrix cached = forward(model, seq, std::span(&head, 1)).recorded[0];
      Matrix rows(seq.size() - prompt_len, cached.cols());
      for (std::size_t i = 0; i < rows.rows(); ++i)
        for (std::size_t j = 0; j < rows.cols(); ++j) rows(i, j) = cached(prompt_len + i, j);
      const std::vector<PatchHook> patch = {{head, rows, prompt_len}};
      const ForwardResult run = forward(model, seq, std::span(&final_resid, 1), steer, patch);
      double value = 0.0;
      if (options.metric == PatchMetric::logit_diff) {
        const std::uint32_t a = *options.answer_token;
        value = run.logits(answer_row, a) - clean_logits.logits(answer_row, a);
      } else {
        const std::size_t last = seq.size() - 1;
        double dot_ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t j = 0; j < run.recorded[0].cols(); ++j) {
          const double a = run.recorded[0](last, j), b = steered.recorded[0](last, j);
          dot_ab += a * b;
          aa += a * a;
          bb += b * b;
        }
        value = 1.0 - dot_ab / (std::sqrt(aa) * std::sqrt(bb));
      }
      out(static_cast<std::size_t>(l - spec.layer - 1), static_cast<std::size_t>(h)) = value;
    }
  }
  return out;
}

}  // namespace rvec::oracle
