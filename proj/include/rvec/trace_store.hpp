#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rvec/linalg.hpp"
#include "rvec/reasoning.hpp"

namespace rvec {

/// Residual-stream activations of one generation, generated tokens only.
struct ActivationTrace {
  std::string instance_id;
  ReasoningType reasoning_type = ReasoningType::deductive;
  Variant variant = Variant::unsteered;
  int layer = 0;
  bool correct = false;
  Matrix activations;  // n_tokens × d
  std::vector<std::uint32_t> token_ids;  // empty, or one id per activation row

  std::size_t n_tokens() const { return activations.rows(); }
  std::size_t dim() const { return activations.cols(); }
  /// Checks the row/token-id invariants; throws EmptyTrace or DimensionMismatch.
  void validate() const;
};

struct ContrastPair {
  std::string instance_id;
  ReasoningType reasoning_type = ReasoningType::deductive;
  Vector pos_mean;
  Vector neg_mean;
};

struct ContrastDataset {
  ReasoningType reasoning_type = ReasoningType::deductive;
  std::vector<ContrastPair> pairs;
  std::size_t d = 0;
  /// Strong runs with no weak run of the same instance_id (skipped, not an error).
  std::size_t unmatched = 0;

  Matrix positives() const;
  Matrix negatives() const;
};

/// Arithmetic mean over the trace's rows. Throws EmptyTrace / NonFinite.
Vector mean_activation(const ActivationTrace& trace);

/// Pairs strong and weak runs of one reasoning type by instance_id and keeps
/// instances where the strong run is correct and the weak run is not.
/// Throws NoValidPairs, DimensionMismatch, ConfigError (wrong variants or mixed types).
ContrastDataset build_contrast_pairs(std::span<const ActivationTrace> strong_runs,
                                     std::span<const ActivationTrace> weak_runs);

/// Groups a mixed set of runs by reasoning type and builds one dataset per
/// type that has at least one valid pair.
std::map<ReasoningType, ContrastDataset> build_contrast_datasets(
    std::span<const ActivationTrace> runs);

void write_trace(const ActivationTrace& trace, const std::filesystem::path& path);
ActivationTrace read_trace(const std::filesystem::path& path);

/// A dataset directory: trace files plus manifest.json listing relative paths.
void write_trace_dataset(const std::filesystem::path& dir, std::span<const ActivationTrace> traces);
std::vector<ActivationTrace> read_trace_dataset(const std::filesystem::path& dir);

void write_contrast_dataset(const ContrastDataset& data, const std::filesystem::path& path);
ContrastDataset read_contrast_dataset(const std::filesystem::path& path);

}  // namespace rvec
