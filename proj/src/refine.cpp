#include "rvec/refine.hpp"

#include <cmath>
#include <random>

#include "rvec/adam.hpp"
#include "rvec/batching.hpp"
#include "rvec/container.hpp"
#include "rvec/csv.hpp"
#include "rvec/error.hpp"

namespace rvec {

void RefineConfig::validate() const {
  require(lambda_com >= 0.0 && lambda_sub >= 0.0, ErrorKind::ConfigError, "lambdas must be >= 0");
  require(learning_rate >= 0.0, ErrorKind::ConfigError, "refine learning_rate must be >= 0");
  require(epochs >= 1, ErrorKind::ConfigError, "refine epochs must be >= 1");
}

double loss_com(const PerType<Vector>& thetas) {
  double total = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t s = 0; s < 3; ++s)
      if (r != s) total -= cosine(thetas[r], thetas[s]);
  return total;
}

void loss_com_gradient(const PerType<Vector>& thetas, PerType<Vector>& grads) {
  PerType<double> norms{};
  for (std::size_t r = 0; r < 3; ++r) {
    norms[r] = norm(thetas[r]);
    require(norms[r] > 0.0, ErrorKind::ZeroNorm, "complementary loss of a zero vector");
    grads[r].assign(thetas[r].size(), 0.0);
  }
  // Each unordered pair appears twice in the ordered sum.
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t s = 0; s < 3; ++s) {
      if (r == s) continue;
      const double c = dot(thetas[r], thetas[s]) / (norms[r] * norms[s]);
      axpy(-2.0 / (norms[r] * norms[s]), thetas[s], grads[r]);
      axpy(2.0 * c / (norms[r] * norms[r]), thetas[r], grads[r]);
    }
  }
}

Vector project_onto(std::span<const double> theta, const ReasoningSubspace& subspace) {
  require(theta.size() == subspace.dim(), ErrorKind::DimensionMismatch, "subspace dimension");
  const Vector coeffs = matvec_t(subspace.basis, theta);  // Uᵀθ
  return matvec(subspace.basis, coeffs);
}

double loss_sub(std::span<const double> theta, const ReasoningSubspace& subspace) {
  return squared_norm(subtract(theta, project_onto(theta, subspace)));
}

void loss_sub_gradient(std::span<const double> theta, const ReasoningSubspace& subspace,
                       std::span<double> grad) {
  const Vector residual = subtract(theta, project_onto(theta, subspace));
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = 2.0 * residual[i];
}

LossBreakdown total_loss(const RefineParams& p, const RefineBatch& batch,
                         const PerType<ReasoningSubspace>& subspaces, double lambda_com,
                         double lambda_sub) {
  LossBreakdown out;
  double probe_sum = 0.0, sub_sum = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    out.probe[r] = bce_loss(p.theta[r], p.bias[r], *batch.data[r], batch.rows[r]);
    out.sub[r] = loss_sub(p.theta[r], subspaces[r]);
    probe_sum += out.probe[r];
    sub_sum += out.sub[r];
  }
  out.com = loss_com(p.theta);
  out.total = probe_sum + lambda_com * out.com + lambda_sub * sub_sum;
  return out;
}

RefineParams total_gradient(const RefineParams& p, const RefineBatch& batch,
                            const PerType<ReasoningSubspace>& subspaces, double lambda_com,
                            double lambda_sub) {
  RefineParams g;
  PerType<Vector> com_grad;
  loss_com_gradient(p.theta, com_grad);
  for (std::size_t r = 0; r < 3; ++r) {
    const std::size_t d = p.theta[r].size();
    g.theta[r].assign(d, 0.0);
    bce_gradient(p.theta[r], p.bias[r], *batch.data[r], batch.rows[r], g.theta[r], g.bias[r]);
    Vector sub_grad(d);
    loss_sub_gradient(p.theta[r], subspaces[r], sub_grad);
    axpy(lambda_com, com_grad[r], g.theta[r]);
    axpy(lambda_sub, sub_grad, g.theta[r]);
  }
  return g;
}

namespace {

std::vector<double> flatten(const RefineParams& p) {
  std::vector<double> out;
  for (std::size_t r = 0; r < 3; ++r) {
    out.insert(out.end(), p.theta[r].begin(), p.theta[r].end());
    out.push_back(p.bias[r]);
  }
  return out;
}

void unflatten(std::span<const double> flat, RefineParams& p) {
  std::size_t k = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    for (double& v : p.theta[r]) v = flat[k++];
    p.bias[r] = flat[k++];
  }
}

}  // namespace

RefineResult refine_vectors(const PerType<ReasoningVector>& naive,
                            const PerType<ContrastDataset>& datasets,
                            const PerType<ReasoningSubspace>& subspaces, const RefineConfig& cfg) {
  cfg.validate();
  const std::size_t d = naive[0].dim();
  PerType<LabeledSet> data;
  for (std::size_t r = 0; r < 3; ++r) {
    const ReasoningType t = kReasoningTypes[r];
    require(naive[r].reasoning_type == t && datasets[r].reasoning_type == t &&
                subspaces[r].reasoning_type == t,
            ErrorKind::ConfigError, "refine inputs must be ordered deductive, inductive, abductive");
    require(naive[r].dim() == d && datasets[r].d == d && subspaces[r].dim() == d,
            ErrorKind::DimensionMismatch, "refine inputs disagree on d");
    data[r] = LabeledSet::from(datasets[r]);
  }

  RefineParams p;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t r = 0; r < 3; ++r) {
    if (cfg.init == RefineInit::from_naive) {
      p.theta[r] = naive[r].theta;
      p.bias[r] = naive[r].bias;
    } else {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
      p.theta[r].resize(d);
      for (double& v : p.theta[r]) v = normal(rng);
      p.bias[r] = 0.0;
    }
  }

  // Independent shuffles per type, all derived from the one seed.
  std::vector<BatchCursor> cursors;
  std::size_t steps_per_epoch = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    cursors.emplace_back(data[r].size(), cfg.batch_size, rng());
    steps_per_epoch = std::max(steps_per_epoch, cursors.back().batches_per_pass());
  }

  std::vector<double> flat = flatten(p);
  Adam opt(flat.size(), cfg.learning_rate);
  RefineResult result;
  RefineBatch full;
  for (std::size_t r = 0; r < 3; ++r) full.data[r] = &data[r];

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      RefineBatch batch = full;
      for (std::size_t r = 0; r < 3; ++r) batch.rows[r] = cursors[r].next();
      const RefineParams g = total_gradient(p, batch, subspaces, cfg.lambda_com, cfg.lambda_sub);
      opt.step(flat, flatten(g));
      unflatten(flat, p);
    }
    LossBreakdown loss = total_loss(p, full, subspaces, cfg.lambda_com, cfg.lambda_sub);
    if (!std::isfinite(loss.total) || !all_finite(flat))
      fail(ErrorKind::NonFinite, "refinement diverged at epoch " + std::to_string(epoch));
    result.loss_history.push_back({epoch, loss});
  }

  for (std::size_t r = 0; r < 3; ++r) {
    result.vectors[r] = {kReasoningTypes[r], p.theta[r], p.bias[r], Provenance::refined};
  }
  return result;
}

void write_loss_history_csv(const std::vector<LossHistoryRow>& history,
                            const std::filesystem::path& path) {
  CsvWriter csv("epoch,l_probe_d,l_probe_i,l_probe_a,l_com,l_sub_d,l_sub_i,l_sub_a,total");
  for (const auto& row : history) {
    const auto& l = row.loss;
    csv.row(row.epoch, l.probe[0], l.probe[1], l.probe[2], l.com, l.sub[0], l.sub[1], l.sub[2],
            l.total);
  }
  write_text_file(path, csv.str());
}

}  // namespace rvec
