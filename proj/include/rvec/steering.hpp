#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvec/probes.hpp"
#include "rvec/toy_model.hpp"
#include "rvec/toy_tasks.hpp"

namespace rvec {

/// Adds strength·θ/‖θ‖ to resid_post of `layer` at generated positions.
struct SteeringSpec {
  ReasoningVector vector;
  int layer = 1;
  double strength = 0.0;

  /// Throws LayerOutOfRange / ZeroNorm / DimensionMismatch.
  void validate(const ToyModelConfig& cfg) const;
  Vector steering_vector() const;
};

enum class EvalVariant { unsteered, mono, complementary };
std::string_view to_string(EvalVariant v);

struct DecodeMode {
  enum class Kind { greedy, sampling };
  Kind kind = Kind::greedy;
  std::size_t n = 1;
  double temperature = 1.0;
  std::uint64_t base_seed = 0;

  static DecodeMode greedy() { return {}; }
  static DecodeMode sampling(std::size_t n, double temperature, std::uint64_t base_seed) {
    return {Kind::sampling, n, temperature, base_seed};
  }
  /// "greedy" or "sampling@n".
  std::string label() const;
  /// Decode options for run k of one instance.
  DecodeOptions options(std::size_t run, std::string_view instance_id) const;
};

struct EvalOptions {
  std::size_t max_len = 16;
  std::optional<std::uint32_t> stop_token = vocab::EOS;
};

struct EvalReport {
  EvalVariant variant = EvalVariant::unsteered;
  ReasoningType reasoning_type = ReasoningType::deductive;
  DecodeMode decode;
  double metric = 0.0;
  std::size_t n_instances = 0;
  std::size_t n_excluded = 0;
};

Generation steer_generate(const ToyModel& model, std::span<const std::uint32_t> prompt,
                          const SteeringSpec& spec, const DecodeOptions& decode,
                          const EvalOptions& options = {});

/// Accuracy of the first candidate token of each generation; generations with
/// no candidate are excluded. sampling(n) averages the per-run accuracies of n
/// seeded runs, and counts instances and exclusions over all runs.
/// Throws AllExcluded.
EvalReport evaluate(const ToyModel& model, const ToyTask& task,
                    std::span<const TaskInstance> instances, const std::optional<SteeringSpec>& spec,
                    const DecodeMode& decode, EvalVariant variant = EvalVariant::unsteered,
                    const EvalOptions& options = {});

struct SweepPoint {
  double strength = 0.0;
  EvalReport report;
};

std::vector<SweepPoint> strength_sweep(const ToyModel& model, const ToyTask& task,
                                       std::span<const TaskInstance> instances,
                                       const ReasoningVector& vector, int layer,
                                       std::span<const double> strengths, const DecodeMode& decode,
                                       EvalVariant variant = EvalVariant::mono,
                                       const EvalOptions& options = {});

/// variant,type,decode,metric,n,excluded
std::string eval_reports_csv(std::span<const EvalReport> reports);
/// strength,metric
std::string sweep_csv(std::span<const SweepPoint> points);

}  // namespace rvec
