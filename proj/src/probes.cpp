#include "rvec/probes.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "rvec/adam.hpp"
#include "rvec/batching.hpp"
#include "rvec/container.hpp"
#include "rvec/error.hpp"
#include "rvec/kernels.hpp"

namespace rvec {

using nlohmann::json;

std::string_view to_string(Provenance p) { return p == Provenance::naive ? "naive" : "refined"; }

Provenance parse_provenance(std::string_view name) {
  if (name == "naive") return Provenance::naive;
  if (name == "refined") return Provenance::refined;
  fail(ErrorKind::ConfigError, "unknown provenance: " + std::string(name));
}

void ProbeTrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorKind::ConfigError, "probe learning_rate must be > 0");
  require(epochs >= 1, ErrorKind::ConfigError, "probe epochs must be >= 1");
  require(l2 >= 0.0, ErrorKind::ConfigError, "probe l2 must be >= 0");
}

LabeledSet LabeledSet::from(const ContrastDataset& data) {
  require(!data.pairs.empty(), ErrorKind::EmptyInput, "empty contrast dataset");
  const std::size_t n = data.pairs.size();
  LabeledSet s{Matrix(2 * n, data.d), Vector(2 * n)};
  for (std::size_t i = 0; i < n; ++i) {
    require(data.pairs[i].pos_mean.size() == data.d && data.pairs[i].neg_mean.size() == data.d,
            ErrorKind::DimensionMismatch, "pair dimension differs from dataset d");
    std::copy(data.pairs[i].pos_mean.begin(), data.pairs[i].pos_mean.end(), s.x.row(i).begin());
    std::copy(data.pairs[i].neg_mean.begin(), data.pairs[i].neg_mean.end(), s.x.row(n + i).begin());
    s.y[i] = 1.0;
    s.y[n + i] = 0.0;
  }
  return s;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

template <typename F>
void for_rows(const LabeledSet& data, std::span<const std::size_t> rows, F&& f) {
  if (rows.empty()) {
    for (std::size_t i = 0; i < data.size(); ++i) f(i);
  } else {
    for (std::size_t i : rows) f(i);
  }
}

}  // namespace

double probe_predict(const ReasoningVector& v, std::span<const double> x) {
  require(v.theta.size() == x.size(), ErrorKind::DimensionMismatch, "probe input dimension");
  return sigmoid(dot(v.theta, x) + v.bias);
}

double bce_loss(std::span<const double> theta, double bias, const LabeledSet& data,
                std::span<const std::size_t> rows) {
  require(theta.size() == data.x.cols(), ErrorKind::DimensionMismatch, "bce: dimension");
  double total = 0.0;
  std::size_t count = 0;
  for_rows(data, rows, [&](std::size_t i) {
    const double z = dot(theta, data.x.row(i)) + bias;
    total += softplus(z) - data.y[i] * z;
    ++count;
  });
  return total / static_cast<double>(count);
}

void bce_gradient(std::span<const double> theta, double bias, const LabeledSet& data,
                  std::span<const std::size_t> rows, std::span<double> grad_theta,
                  double& grad_bias) {
  require(theta.size() == data.x.cols() && grad_theta.size() == theta.size(),
          ErrorKind::DimensionMismatch, "bce gradient: dimension");
  std::fill(grad_theta.begin(), grad_theta.end(), 0.0);
  grad_bias = 0.0;
  std::size_t count = 0;
  for_rows(data, rows, [&](std::size_t i) {
    const auto x = data.x.row(i);
    const double r = sigmoid(dot(theta, x) + bias) - data.y[i];
    axpy(r, x, grad_theta);
    grad_bias += r;
    ++count;
  });
  const double inv = 1.0 / static_cast<double>(count);
  for (double& g : grad_theta) g *= inv;
  grad_bias *= inv;
}

double probe_accuracy(const ReasoningVector& v, const LabeledSet& data) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool predicted_pos = probe_predict(v, data.x.row(i)) >= 0.5;
    if (predicted_pos == (data.y[i] > 0.5)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainedProbe train_probe(const ContrastDataset& data, const ProbeTrainConfig& cfg) {
  cfg.validate();
  const LabeledSet raw = LabeledSet::from(data);
  const std::size_t d = raw.x.cols();

  // Optional per-feature standardization; the learned (θ, b) are mapped back
  // to raw coordinates afterwards.
  Vector shift(d, 0.0), scale(d, 1.0);
  LabeledSet train = raw;
  if (cfg.standardize) {
    kernels::serial::column_means(raw.x, shift);
    for (std::size_t c = 0; c < d; ++c) {
      double var = 0.0;
      for (std::size_t i = 0; i < raw.size(); ++i) var += std::pow(raw.x(i, c) - shift[c], 2);
      const double sd = std::sqrt(var / static_cast<double>(raw.size()));
      scale[c] = sd > 0.0 ? sd : 1.0;
    }
    for (std::size_t i = 0; i < train.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) train.x(i, c) = (raw.x(i, c) - shift[c]) / scale[c];
  }

  // params = [θ..., b]
  std::vector<double> params(d + 1, 0.0), grad(d + 1, 0.0);
  Adam opt(d + 1, cfg.learning_rate);
  BatchCursor batches(train.size(), cfg.batch_size, cfg.seed);
  std::span<double> theta(params.data(), d);
  std::span<double> grad_theta(grad.data(), d);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t b = 0; b < batches.batches_per_pass(); ++b) {
      auto rows = batches.next();
      bce_gradient(theta, params[d], train, rows, grad_theta, grad[d]);
      if (cfg.l2 > 0.0) axpy(2.0 * cfg.l2, theta, grad_theta);
      opt.step(params, grad);
    }
    if (!all_finite(params)) fail(ErrorKind::NonFinite, "probe training diverged");
  }

  TrainedProbe out;
  out.vector.reasoning_type = data.reasoning_type;
  out.vector.provenance = Provenance::naive;
  out.vector.theta.assign(d, 0.0);
  out.vector.bias = params[d];
  for (std::size_t c = 0; c < d; ++c) {
    out.vector.theta[c] = params[c] / scale[c];
    out.vector.bias -= params[c] * shift[c] / scale[c];
  }
  if (!all_finite(out.vector.theta) || !std::isfinite(out.vector.bias))
    fail(ErrorKind::NonFinite, "probe training diverged");
  if (norm(out.vector.theta) == 0.0) fail(ErrorKind::ZeroNorm, "probe learned a zero vector");
  out.final_loss = bce_loss(out.vector.theta, out.vector.bias, raw);
  if (!std::isfinite(out.final_loss)) fail(ErrorKind::NonFinite, "probe loss is not finite");
  out.train_accuracy = probe_accuracy(out.vector, raw);
  return out;
}

Matrix cosine_matrix(std::span<const ReasoningVector> vectors) {
  const std::size_t n = vectors.size();
  Vector norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(vectors[i].dim() == vectors.front().dim(), ErrorKind::DimensionMismatch,
            "cosine_matrix: dimension");
    norms[i] = norm(vectors[i].theta);
    require(norms[i] > 0.0, ErrorKind::ZeroNorm, "cosine_matrix: zero vector");
  }
  Matrix c(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    c(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = dot(vectors[i].theta, vectors[j].theta) / (norms[i] * norms[j]);
      c(i, j) = c(j, i) = std::clamp(v, -1.0, 1.0);
    }
  }
  return c;
}

void write_vector(const ReasoningVector& v, const std::filesystem::path& path) {
  json header = {{"reasoning_type", to_string(v.reasoning_type)},
                 {"d", v.dim()},
                 {"bias", v.bias},
                 {"provenance", to_string(v.provenance)}};
  BodyWriter body;
  body.f32(v.theta);
  write_container(path, "RVVE", header, body.bytes());
}

ReasoningVector read_vector(const std::filesystem::path& path) {
  Container c = read_container(path, "RVVE");
  try {
    ReasoningVector v;
    v.reasoning_type = parse_reasoning_type(c.header.at("reasoning_type").get<std::string>());
    v.bias = c.header.at("bias").get<double>();
    v.provenance = parse_provenance(c.header.at("provenance").get<std::string>());
    BodyReader body(c.body);
    v.theta = body.f32(c.header.at("d").get<std::size_t>());
    body.expect_end();
    return v;
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad vector header: ") + e.what());
  }
}

}  // namespace rvec
