#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "rvec/linalg.hpp"
#include "rvec/reasoning.hpp"
#include "rvec/trace_store.hpp"

namespace rvec {

/// z = ReLU(W_enc·(h − b_dec) + b_enc),  ĥ = W_dec·z + b_dec.
struct SaeModel {
  Matrix w_enc;  // m × d
  Vector b_enc;  // m
  Matrix w_dec;  // d × m, unit-norm columns
  Vector b_dec;  // d

  std::size_t m() const { return w_enc.rows(); }
  std::size_t d() const { return w_dec.rows(); }
  /// Shapes consistent, all finite, decoder columns unit norm within 1e-6.
  void validate() const;
  void normalize_decoder_columns();
};

struct SaeTrainConfig {
  std::size_t m = 64;
  double l1_coeff = 1e-2;
  int steps = 2000;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
};

Vector encode(const SaeModel& sae, std::span<const double> h);
/// Row-wise encode of an n × d matrix.
Matrix encode_rows(const SaeModel& sae, const Matrix& h);
Vector decode(const SaeModel& sae, std::span<const double> z);

/// Minimizes mean(‖h − decode(encode(h))‖² + l1_coeff·‖z‖₁) with Adam,
/// renormalizing decoder columns after every step. Throws DivergenceError.
SaeModel train_sae(const Matrix& activations, const SaeTrainConfig& cfg);

struct SaeFitReport {
  double mean_reconstruction_error = 0.0;  // mean ‖h − ĥ‖
  double mean_input_norm = 0.0;            // mean ‖h‖
  double mean_active_features = 0.0;       // mean count of z_j > 0
};
SaeFitReport evaluate_sae(const SaeModel& sae, const Matrix& activations);

enum class ThresholdMode { quantile, absolute };

struct SubspaceConfig {
  double epsilon = 1e-6;
  /// Quantile level in quantile mode; the ratio threshold itself in absolute mode.
  double quantile_alpha = 0.9;
  std::size_t K = 3000;
  ThresholdMode threshold_mode = ThresholdMode::quantile;
};

struct FeatureStats {
  ReasoningType reasoning_type = ReasoningType::deductive;
  Vector mu_pos;
  Vector mu_neg;
  Vector rho;
  Vector mean_strength;
};

/// Statistics over the dataset's per-instance mean activations.
FeatureStats feature_stats(const SaeModel& sae, const ContrastDataset& data,
                           const SubspaceConfig& cfg);
/// Same statistics over arbitrary positive / negative rows (e.g. per-token).
FeatureStats feature_stats(const SaeModel& sae, ReasoningType type, const Matrix& positives,
                           const Matrix& negatives, const SubspaceConfig& cfg);

/// Linear-interpolation quantile between order statistics (R type 7).
double quantile_type7(std::span<const double> values, double alpha);

/// Ratio filter then top-K by mean strength (ties → lower id); returned sorted by id.
/// The count is clamped to min(K, |candidates|, max_features). Throws EmptySelection.
std::vector<std::size_t> select_features(const FeatureStats& stats, const SubspaceConfig& cfg,
                                         std::size_t max_features =
                                             std::numeric_limits<std::size_t>::max());

struct ReasoningSubspace {
  ReasoningType reasoning_type = ReasoningType::deductive;
  std::vector<std::size_t> feature_ids;
  Matrix basis;  // d × K′, orthonormal columns

  std::size_t rank() const { return basis.cols(); }
  std::size_t dim() const { return basis.rows(); }
};

/// Relative cutoff on |R(j, j)| below which QR columns are dropped.
inline constexpr double kRankTolerance = 1e-8;

/// Orthonormal basis of the selected decoder columns. Throws RankZero.
ReasoningSubspace build_subspace(const SaeModel& sae, std::span<const std::size_t> feature_ids,
                                 ReasoningType type = ReasoningType::deductive);
/// Same, starting from an explicit d × K direction matrix.
ReasoningSubspace build_subspace_from_columns(const Matrix& directions, ReasoningType type,
                                              std::vector<std::size_t> feature_ids = {});

void write_sae(const SaeModel& sae, const std::filesystem::path& path);
SaeModel read_sae(const std::filesystem::path& path);
void write_subspace(const ReasoningSubspace& s, const std::filesystem::path& path);
ReasoningSubspace read_subspace(const std::filesystem::path& path);

}  // namespace rvec
