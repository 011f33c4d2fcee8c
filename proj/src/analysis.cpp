#include "rvec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rvec/csv.hpp"
#include "rvec/error.hpp"
#include "rvec/kernels.hpp"

namespace rvec {

// --- delta features --------------------------------------------------------

Vector mean_code(const SaeModel& sae, std::span<const ActivationTrace> traces, Aggregation mode) {
  require(!traces.empty(), ErrorKind::EmptyInput, "no traces to encode");
  std::vector<Vector> rows;
  for (const auto& t : traces) {
    if (mode == Aggregation::per_instance_mean) {
      rows.push_back(mean_activation(t));
    } else {
      t.validate();
      for (std::size_t i = 0; i < t.n_tokens(); ++i)
        rows.emplace_back(t.activations.row(i).begin(), t.activations.row(i).end());
    }
  }
  const Matrix codes = encode_rows(sae, Matrix::from_rows(rows));
  Vector out(sae.m(), 0.0);
  kernels::serial::column_means(codes, out);
  return out;
}

DeltaFeatureReport delta_features(const SaeModel& sae, std::span<const ActivationTrace> orig,
                                  std::span<const ActivationTrace> refined, Aggregation mode,
                                  std::size_t top_n) {
  require(!orig.empty() && !refined.empty(), ErrorKind::EmptyInput,
          "delta_features needs two non-empty trace sets");
  const int layer = orig.front().layer;
  for (auto set : {orig, refined})
    for (const auto& t : set)
      require(t.layer == layer, ErrorKind::ConfigError, "traces come from different layers");

  DeltaFeatureReport r;
  r.reasoning_type = refined.front().reasoning_type;
  const Vector a = mean_code(sae, orig, mode);
  const Vector b = mean_code(sae, refined, mode);
  r.delta = subtract(b, a);

  std::vector<std::size_t> ids(r.delta.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::stable_sort(ids.begin(), ids.end(),
                   [&](std::size_t x, std::size_t y) { return r.delta[x] > r.delta[y]; });
  for (std::size_t i = 0; i < std::min(top_n, ids.size()); ++i)
    r.top.emplace_back(ids[i], r.delta[ids[i]]);
  return r;
}

// --- co-activation ---------------------------------------------------------

std::vector<std::size_t> top_k_indices(std::span<const double> x, std::size_t k) {
  std::vector<std::size_t> ids(x.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

CoactivationMatrix coactivation(std::span<const std::string> labels,
                                std::span<const Vector> settings, std::size_t k, bool mask) {
  require(!settings.empty(), ErrorKind::EmptyInput, "coactivation: no settings");
  require(labels.size() == settings.size(), ErrorKind::DimensionMismatch,
          "coactivation: label count differs from setting count");
  require(k >= 1, ErrorKind::ConfigError, "coactivation: k must be >= 1");
  const std::size_t m = settings.front().size();
  std::vector<Vector> masked;
  Vector sums;
  for (const Vector& x : settings) {
    require(x.size() == m, ErrorKind::DimensionMismatch, "coactivation: vector dimensions differ");
    require(all_finite(x), ErrorKind::NonFinite, "coactivation: non-finite entry");
    for (double v : x) require(v >= 0.0, ErrorKind::ConfigError, "coactivation: negative entry");
    Vector y(m, 0.0);
    if (mask) {
      for (std::size_t j : top_k_indices(x, k)) y[j] = x[j];
    } else {
      y = x;
    }
    double s = 0.0;
    for (double v : y) s += v;
    sums.push_back(s);
    masked.push_back(std::move(y));
  }

  CoactivationMatrix out;
  out.labels.assign(labels.begin(), labels.end());
  out.k = k;
  const std::size_t n = settings.size();
  out.S = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double denom = sums[i] + sums[j];
      if (denom == 0.0)
        fail(ErrorKind::ZeroVector, "coactivation: settings " + labels[i] + " and " + labels[j] +
                                        " are both zero after masking");
      double v = 1.0;
      if (i != j) {
        double mins = 0.0;
        for (std::size_t f = 0; f < m; ++f) mins += std::min(masked[i][f], masked[j][f]);
        v = std::min(1.0, 2.0 * mins / denom);
      }
      out.S(i, j) = out.S(j, i) = v;
    }
  return out;
}

// --- spans -----------------------------------------------------------------

SpanResult extract_span(std::span<const double> delta, std::size_t max_len) {
  require(!delta.empty(), ErrorKind::EmptyInput, "extract_span: empty delta");
  require(max_len >= 1, ErrorKind::ConfigError, "extract_span: max_len must be >= 1");
  SpanResult best;
  bool have = false;
  for (std::size_t s = 0; s < delta.size(); ++s) {
    double sum = 0.0;
    for (std::size_t len = 1; len <= max_len && s + len <= delta.size(); ++len) {
      sum += delta[s + len - 1];
      // Strict improvement keeps the earlier start and the shorter length.
      if (!have || sum > best.score) {
        best.start = s;
        best.end = s + len - 1;
        best.score = sum;
        have = true;
      }
    }
  }
  best.token_deltas.assign(delta.begin(), delta.end());
  return best;
}

std::vector<double> token_log_shift(std::span<const double> logprobs_steered,
                                    std::span<const double> logprobs_base) {
  require(logprobs_steered.size() == logprobs_base.size(), ErrorKind::LengthMismatch,
          "token_log_shift: lists differ in length");
  std::vector<double> out(logprobs_steered.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logprobs_steered[i] - logprobs_base[i];
  return out;
}

// --- patching --------------------------------------------------------------

std::string_view to_string(PatchMetric m) {
  return m == PatchMetric::logit_diff ? "logit_diff" : "hidden_semantic_diff";
}

std::vector<std::uint32_t> patch_sequence(const ToyModel& model,
                                          std::span<const std::uint32_t> prompt,
                                          const SteeringSpec& spec, const EvalOptions& options) {
  spec.validate(model.config);
  GenerateOptions g;
  g.max_len = options.max_len;
  g.stop_token = options.stop_token;
  g.steering = Steering{spec.layer, spec.steering_vector()};
  g.record_layer = model.config.n_layers - 1;
  const Generation gen = generate(model, prompt, g);
  std::vector<std::uint32_t> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), gen.tokens.begin(), gen.tokens.end());
  return seq;
}

double patch_metric(const PatchOptions& options, const ForwardResult& run,
                    const ForwardResult& clean, const ForwardResult& steered,
                    std::size_t answer_row) {
  if (options.metric == PatchMetric::logit_diff) {
    const std::uint32_t a = *options.answer_token;
    return run.logits(answer_row, a) - clean.logits(answer_row, a);
  }
  const Matrix& h_run = run.recorded.back();
  const Matrix& h_ref = steered.recorded.back();
  const std::size_t last = h_run.rows() - 1;
  return 1.0 - cosine(h_run.row(last), h_ref.row(last));
}

PatchHeatmap patch_heads(const ToyModel& model, std::span<const std::uint32_t> prompt,
                         const SteeringSpec& spec, const PatchOptions& options) {
  if (options.metric == PatchMetric::logit_diff) {
    if (!options.answer_token)
      fail(ErrorKind::MissingAnswerToken, "logit_diff patching needs an answer token");
    require(*options.answer_token < static_cast<std::uint32_t>(model.config.vocab),
            ErrorKind::DimensionMismatch, "answer token outside vocabulary");
  }
  const ToyModelConfig& cfg = model.config;
  const std::vector<std::uint32_t> seq = patch_sequence(model, prompt, spec, options.generation);
  const std::size_t p_len = prompt.size();
  const std::size_t n_gen = seq.size() - p_len;
  const std::size_t answer_row = p_len + std::min(options.answer_step, n_gen - 1) - 1;

  const int first = spec.layer + 1;
  const int n_rows = cfg.n_layers - first;
  const std::vector<WriteHook> writes = {
      {HookPoint::resid(spec.layer), spec.steering_vector(), p_len}};

  // Read every patchable head, plus the final residual stream (read last).
  std::vector<HookPoint> reads;
  for (int l = first; l < cfg.n_layers; ++l)
    for (int h = 0; h < cfg.n_heads; ++h) reads.push_back(HookPoint::head_out(l, h));
  reads.push_back(HookPoint::resid(cfg.n_layers - 1));

  const ForwardResult clean = forward(model, seq, reads);
  const ForwardResult steered = forward(model, seq, reads, writes);
  const ForwardResult& cache = options.source == PatchSource::clean ? clean : steered;

  PatchHeatmap out;
  out.metric_kind = options.metric;
  out.first_layer = first;
  out.values = Matrix(static_cast<std::size_t>(std::max(n_rows, 0)),
                      static_cast<std::size_t>(cfg.n_heads));
  out.baseline = patch_metric(options, steered, clean, steered, answer_row);

  const HookPoint final_resid = HookPoint::resid(cfg.n_layers - 1);
  const std::size_t n_cells = out.values.rows() * out.values.cols();
  kernels::for_each_index(n_cells, [&](std::size_t cell) {
    const int l = first + static_cast<int>(cell / cfg.n_heads);
    const int h = static_cast<int>(cell % cfg.n_heads);
    const Matrix& z = cache.recorded[cell];
    PatchHook patch{HookPoint::head_out(l, h), Matrix(n_gen, z.cols()), p_len};
    for (std::size_t i = 0; i < n_gen; ++i)
      std::copy(z.row(p_len + i).begin(), z.row(p_len + i).end(), patch.values.row(i).begin());
    const ForwardResult run =
        forward(model, seq, std::span(&final_resid, 1), writes, std::span(&patch, 1));
    out.values(cell / cfg.n_heads, cell % cfg.n_heads) =
        patch_metric(options, run, clean, steered, answer_row);
  });
  return out;
}

// --- report formatting -----------------------------------------------------

std::string delta_csv(const DeltaFeatureReport& r) {
  CsvWriter csv("type,rank,feature_id,delta");
  for (std::size_t i = 0; i < r.top.size(); ++i)
    csv.row(to_string(r.reasoning_type), i + 1, r.top[i].first, r.top[i].second);
  return csv.str();
}

std::string coactivation_csv(const CoactivationMatrix& m) {
  std::string header = "setting";
  for (const auto& l : m.labels) header += "," + l;
  std::string out = header + "\n";
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    out += m.labels[i];
    for (std::size_t j = 0; j < m.labels.size(); ++j) out += "," + format_double(m.S(i, j));
    out += "\n";
  }
  return out;
}

std::string heatmap_csv(const PatchHeatmap& h) {
  CsvWriter csv("metric,layer,head,value");
  csv.row(to_string(h.metric_kind), "baseline", "", h.baseline);
  for (std::size_t r = 0; r < h.values.rows(); ++r)
    for (std::size_t c = 0; c < h.values.cols(); ++c)
      csv.row(to_string(h.metric_kind), static_cast<int>(r) + h.first_layer, c, h.values(r, c));
  return csv.str();
}

}  // namespace rvec
