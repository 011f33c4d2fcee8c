#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rvec/sae.hpp"
#include "rvec/steering.hpp"
#include "rvec/toy_model.hpp"
#include "rvec/trace_store.hpp"

namespace rvec {

// --- delta features --------------------------------------------------------

enum class Aggregation { per_instance_mean, per_token };

struct DeltaFeatureReport {
  ReasoningType reasoning_type = ReasoningType::deductive;
  Vector delta;                                    // m
  std::vector<std::pair<std::size_t, double>> top;  // ≤ 5, delta descending, ties → lower id
};

/// Mean SAE code of the traces: per_instance_mean encodes each trace's mean
/// activation; per_token encodes every row. Throws EmptyInput.
Vector mean_code(const SaeModel& sae, std::span<const ActivationTrace> traces,
                 Aggregation mode = Aggregation::per_instance_mean);

/// Δ = mean_code(refined) − mean_code(orig). Throws EmptyInput, ConfigError
/// when the traces were recorded at different layers.
DeltaFeatureReport delta_features(const SaeModel& sae, std::span<const ActivationTrace> orig,
                                  std::span<const ActivationTrace> refined,
                                  Aggregation mode = Aggregation::per_instance_mean,
                                  std::size_t top_n = 5);

// --- co-activation ---------------------------------------------------------

struct CoactivationMatrix {
  std::vector<std::string> labels;
  Matrix S;
  std::size_t k = 100;
};

/// Indices of the k largest entries (ties → lower index).
std::vector<std::size_t> top_k_indices(std::span<const double> x, std::size_t k);

/// S(i,j) = 2Σmin(x_i, x_j) / (Σx_i + Σx_j) after zeroing entries outside each
/// setting's own top-k (skipped when mask = false). Throws ZeroVector,
/// DimensionMismatch, ConfigError on negative entries.
CoactivationMatrix coactivation(std::span<const std::string> labels,
                                std::span<const Vector> settings, std::size_t k = 100,
                                bool mask = true);

// --- spans -----------------------------------------------------------------

struct SpanResult {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  double score = 0.0;
  std::vector<double> token_deltas;
};

/// Highest-sum contiguous span of length ≤ max_len; ties → smaller start, then
/// shorter. O(n·max_len). Throws EmptyInput.
SpanResult extract_span(std::span<const double> delta, std::size_t max_len = 5);

/// steered − base, elementwise. Throws LengthMismatch.
std::vector<double> token_log_shift(std::span<const double> logprobs_steered,
                                    std::span<const double> logprobs_base);

// --- patching --------------------------------------------------------------

enum class PatchMetric { logit_diff, hidden_semantic_diff };
std::string_view to_string(PatchMetric m);

/// Which run supplies the cached head outputs.
enum class PatchSource { clean, steered };

struct PatchOptions {
  PatchMetric metric = PatchMetric::logit_diff;
  std::optional<std::uint32_t> answer_token;
  /// Index within the generated tokens whose prediction carries the answer.
  std::size_t answer_step = 1;
  PatchSource source = PatchSource::clean;
  EvalOptions generation;
};

struct PatchHeatmap {
  PatchMetric metric_kind = PatchMetric::logit_diff;
  int first_layer = 0;  // row 0 of values
  Matrix values;        // (n_layers − first_layer) × n_heads
  double baseline = 0.0;
};

/// The steered greedy generation is produced once; every cell re-runs the
/// steered model over that fixed sequence with one head's output at the
/// generated positions replaced by the cached run's value, for layers
/// spec.layer + 1 … n_layers − 1.
///
///   logit_diff            answer logit of the run − answer logit of the clean run
///   hidden_semantic_diff  1 − cos(final hidden state of the run, unpatched steered)
///
/// `baseline` is the metric of the unpatched steered run. Throws MissingAnswerToken.
PatchHeatmap patch_heads(const ToyModel& model, std::span<const std::uint32_t> prompt,
                         const SteeringSpec& spec, const PatchOptions& options);

/// The fixed sequence patch_heads scores: prompt followed by the steered greedy tokens.
std::vector<std::uint32_t> patch_sequence(const ToyModel& model,
                                          std::span<const std::uint32_t> prompt,
                                          const SteeringSpec& spec, const EvalOptions& options);

/// The metric for one run's logits / final hidden state; shared with test oracles.
double patch_metric(const PatchOptions& options, const ForwardResult& run,
                    const ForwardResult& clean, const ForwardResult& steered,
                    std::size_t answer_row);

// --- report formatting -----------------------------------------------------

std::string delta_csv(const DeltaFeatureReport& r);
std::string coactivation_csv(const CoactivationMatrix& m);
std::string heatmap_csv(const PatchHeatmap& h);

}  // namespace rvec
