#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rvec/linalg.hpp"
#include "rvec/reasoning.hpp"
#include "rvec/trace_store.hpp"

namespace rvec {

enum class Provenance { naive, refined };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view name);

/// Probe weight vector θ_r plus bias b_r for one reasoning type.
struct ReasoningVector {
  ReasoningType reasoning_type = ReasoningType::deductive;
  Vector theta;
  double bias = 0.0;
  Provenance provenance = Provenance::naive;

  std::size_t dim() const { return theta.size(); }
};

struct ProbeTrainConfig {
  double learning_rate = 1e-3;
  int epochs = 200;
  std::size_t batch_size = 16;  // 0 = full batch
  std::uint64_t seed = 0;
  double l2 = 0.0;
  bool standardize = false;

  void validate() const;
};

/// Rows of a contrast dataset with labels: positives (1) first, then negatives (0).
struct LabeledSet {
  Matrix x;
  Vector y;

  static LabeledSet from(const ContrastDataset& data);
  std::size_t size() const { return y.size(); }
};

struct TrainedProbe {
  ReasoningVector vector;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

double sigmoid(double z);

/// σ(θ·x + b). Throws DimensionMismatch.
double probe_predict(const ReasoningVector& v, std::span<const double> x);

/// Mean binary cross-entropy of the probe on the selected rows (all rows when
/// `rows` is empty).
double bce_loss(std::span<const double> theta, double bias, const LabeledSet& data,
                std::span<const std::size_t> rows = {});

/// Gradient of bce_loss; grad_theta is overwritten.
void bce_gradient(std::span<const double> theta, double bias, const LabeledSet& data,
                  std::span<const std::size_t> rows, std::span<double> grad_theta,
                  double& grad_bias);

/// Fraction of rows classified correctly (p ≥ 0.5 counts as positive).
double probe_accuracy(const ReasoningVector& v, const LabeledSet& data);

TrainedProbe train_probe(const ContrastDataset& data, const ProbeTrainConfig& cfg);

/// Pairwise cosine similarity of the vectors' θ; diagonal is exactly 1.
Matrix cosine_matrix(std::span<const ReasoningVector> vectors);

void write_vector(const ReasoningVector& v, const std::filesystem::path& path);
ReasoningVector read_vector(const std::filesystem::path& path);

}  // namespace rvec
