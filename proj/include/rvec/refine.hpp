#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rvec/probes.hpp"
#include "rvec/sae.hpp"

namespace rvec {

enum class RefineInit { from_naive, random };

struct RefineConfig {
  double lambda_com = 1e-1;
  double lambda_sub = 1e-2;
  double learning_rate = 1e-3;
  int epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  RefineInit init = RefineInit::from_naive;

  void validate() const;
};

template <typename T>
using PerType = std::array<T, 3>;

/// The six refined quantities: θ_r and b_r for each reasoning type.
struct RefineParams {
  PerType<Vector> theta;
  PerType<double> bias{};
};

struct LossBreakdown {
  PerType<double> probe{};
  double com = 0.0;
  PerType<double> sub{};
  double total = 0.0;
};

struct LossHistoryRow {
  int epoch = 0;
  LossBreakdown loss;
};

struct RefineResult {
  PerType<ReasoningVector> vectors;
  std::vector<LossHistoryRow> loss_history;
};

/// −Σ over ordered pairs r≠s of cos(θ_r, θ_s). Throws ZeroNorm.
double loss_com(const PerType<Vector>& thetas);
void loss_com_gradient(const PerType<Vector>& thetas, PerType<Vector>& grads);

/// ‖(I − UUᵀ)θ‖².
double loss_sub(std::span<const double> theta, const ReasoningSubspace& subspace);
/// Component of θ inside span(U): UUᵀθ.
Vector project_onto(std::span<const double> theta, const ReasoningSubspace& subspace);
void loss_sub_gradient(std::span<const double> theta, const ReasoningSubspace& subspace,
                       std::span<double> grad);

/// Per-type BCE data and the rows of the current batch (empty span = all rows).
struct RefineBatch {
  PerType<const LabeledSet*> data{};
  PerType<std::span<const std::size_t>> rows{};
};

LossBreakdown total_loss(const RefineParams& p, const RefineBatch& batch,
                         const PerType<ReasoningSubspace>& subspaces, double lambda_com,
                         double lambda_sub);
/// Analytic gradient of total_loss with respect to every θ_r and b_r.
RefineParams total_gradient(const RefineParams& p, const RefineBatch& batch,
                            const PerType<ReasoningSubspace>& subspaces, double lambda_com,
                            double lambda_sub);

/// Joint mini-batch Adam over (θ_r, b_r) for all three types. Throws NonFinite.
RefineResult refine_vectors(const PerType<ReasoningVector>& naive,
                            const PerType<ContrastDataset>& datasets,
                            const PerType<ReasoningSubspace>& subspaces, const RefineConfig& cfg);

void write_loss_history_csv(const std::vector<LossHistoryRow>& history,
                            const std::filesystem::path& path);

}  // namespace rvec
