#include "rvec/steering.hpp"

#include <cmath>

#include "rvec/csv.hpp"
#include "rvec/error.hpp"
#include "rvec/hash.hpp"
#include "rvec/kernels.hpp"

namespace rvec {

void SteeringSpec::validate(const ToyModelConfig& cfg) const {
  if (layer < 0 || layer >= cfg.n_layers)
    fail(ErrorKind::LayerOutOfRange, "steering layer " + std::to_string(layer) + " out of range");
  require(vector.dim() == static_cast<std::size_t>(cfg.d_model), ErrorKind::DimensionMismatch,
          "steering vector dimension differs from d_model");
  require(norm(vector.theta) > 0.0, ErrorKind::ZeroNorm, "steering vector has zero norm");
  require(std::isfinite(strength), ErrorKind::NonFinite, "steering strength is not finite");
}

Vector SteeringSpec::steering_vector() const {
  const double n = norm(vector.theta);
  require(n > 0.0, ErrorKind::ZeroNorm, "steering vector has zero norm");
  Vector out(vector.theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = strength * (vector.theta[i] / n);
  return out;
}

std::string_view to_string(EvalVariant v) {
  switch (v) {
    case EvalVariant::unsteered: return "unsteered";
    case EvalVariant::mono: return "mono";
    case EvalVariant::complementary: return "complementary";
  }
  return "?";
}

std::string DecodeMode::label() const {
  return kind == Kind::greedy ? "greedy" : "sampling@" + std::to_string(n);
}

DecodeOptions DecodeMode::options(std::size_t run, std::string_view instance_id) const {
  if (kind == Kind::greedy) return DecodeOptions::greedy();
  // Run k uses base_seed + k; each instance gets its own stream keyed by id,
  // so results do not depend on instance order.
  std::uint64_t s = (base_seed + run) * 0x9E3779B97F4A7C15ULL + fnv1a64(instance_id);
  s ^= s >> 31;
  return DecodeOptions::sample(temperature, s);
}

Generation steer_generate(const ToyModel& model, std::span<const std::uint32_t> prompt,
                          const SteeringSpec& spec, const DecodeOptions& decode,
                          const EvalOptions& options) {
  spec.validate(model.config);
  GenerateOptions g;
  g.max_len = options.max_len;
  g.stop_token = options.stop_token;
  g.decode = decode;
  g.steering = Steering{spec.layer, spec.steering_vector()};
  g.record_layer = spec.layer + 1;
  return generate(model, prompt, g);
}

EvalReport evaluate(const ToyModel& model, const ToyTask& task,
                    std::span<const TaskInstance> instances, const std::optional<SteeringSpec>& spec,
                    const DecodeMode& decode, EvalVariant variant, const EvalOptions& options) {
  require(!instances.empty(), ErrorKind::EmptyInput, "evaluate: no instances");
  require(decode.n >= 1, ErrorKind::ConfigError, "sampling n must be >= 1");
  if (spec) spec->validate(model.config);
  const std::size_t runs = decode.kind == DecodeMode::Kind::greedy ? 1 : decode.n;

  GenerateOptions base;
  base.max_len = options.max_len;
  base.stop_token = options.stop_token;
  if (spec) {
    base.steering = Steering{spec->layer, spec->steering_vector()};
    base.record_layer = spec->layer + 1 < model.config.n_layers ? spec->layer + 1 : spec->layer;
  } else {
    base.record_layer = 0;
  }

  // outcome: 1 hit, 0 miss, −1 excluded; one slot per (run, instance).
  const std::size_t n = instances.size();
  std::vector<int> outcome(runs * n, 0);
  kernels::for_each_index(runs * n, [&](std::size_t k) {
    const std::size_t run = k / n, i = k % n;
    GenerateOptions g = base;
    g.decode = decode.options(run, instances[i].instance_id);
    const Generation gen = generate(model, instances[i].prompt, g);
    const auto answer = task.find_answer(gen.tokens);
    outcome[k] = !answer ? -1 : (*answer == instances[i].answer ? 1 : 0);
  });

  EvalReport report;
  report.variant = variant;
  report.reasoning_type = task.reasoning_type;
  report.decode = decode;
  report.n_instances = runs * n;
  double metric_sum = 0.0;
  std::size_t scored_runs = 0;
  for (std::size_t run = 0; run < runs; ++run) {
    std::size_t hits = 0, included = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int o = outcome[run * n + i];
      if (o < 0) {
        ++report.n_excluded;
        continue;
      }
      ++included;
      hits += static_cast<std::size_t>(o);
    }
    if (included == 0) continue;
    metric_sum += static_cast<double>(hits) / static_cast<double>(included);
    ++scored_runs;
  }
  if (scored_runs == 0)
    fail(ErrorKind::AllExcluded, "every generation lacked a candidate answer token");
  report.metric = metric_sum / static_cast<double>(scored_runs);
  return report;
}

std::vector<SweepPoint> strength_sweep(const ToyModel& model, const ToyTask& task,
                                       std::span<const TaskInstance> instances,
                                       const ReasoningVector& vector, int layer,
                                       std::span<const double> strengths, const DecodeMode& decode,
                                       EvalVariant variant, const EvalOptions& options) {
  require(!strengths.empty(), ErrorKind::EmptyInput, "strength_sweep: no strengths");
  std::vector<SweepPoint> out;
  for (double s : strengths) {
    SteeringSpec spec{vector, layer, s};
    out.push_back({s, evaluate(model, task, instances, spec, decode, variant, options)});
  }
  return out;
}

std::string eval_reports_csv(std::span<const EvalReport> reports) {
  CsvWriter csv("variant,type,decode,metric,n,excluded");
  for (const auto& r : reports)
    csv.row(to_string(r.variant), to_string(r.reasoning_type), r.decode.label(), r.metric,
            r.n_instances, r.n_excluded);
  return csv.str();
}

std::string sweep_csv(std::span<const SweepPoint> points) {
  CsvWriter csv("strength,metric");
  for (const auto& p : points) csv.row(p.strength, p.report.metric);
  return csv.str();
}

}  // namespace rvec
