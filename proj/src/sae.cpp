#include "rvec/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "rvec/adam.hpp"
#include "rvec/batching.hpp"
#include "rvec/container.hpp"
#include "rvec/error.hpp"
#include "rvec/kernels.hpp"
#include "rvec/qr.hpp"

namespace rvec {

using nlohmann::json;

void SaeModel::validate() const {
  const std::size_t mm = m(), dd = d();
  require(w_enc.cols() == dd && b_enc.size() == mm && w_dec.cols() == mm && b_dec.size() == dd,
          ErrorKind::DimensionMismatch, "inconsistent SAE shapes");
  require(all_finite(w_enc.data()) && all_finite(b_enc) && all_finite(w_dec.data()) &&
              all_finite(b_dec),
          ErrorKind::NonFinite, "SAE weights not finite");
  for (std::size_t j = 0; j < mm; ++j) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < dd; ++i) n2 += w_dec(i, j) * w_dec(i, j);
    require(std::abs(std::sqrt(n2) - 1.0) <= 1e-6, ErrorKind::FormatError,
            "SAE decoder column " + std::to_string(j) + " is not unit norm");
  }
}

void SaeModel::normalize_decoder_columns() {
  for (std::size_t j = 0; j < m(); ++j) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < d(); ++i) n2 += w_dec(i, j) * w_dec(i, j);
    const double n = std::sqrt(n2);
    if (n == 0.0) continue;
    for (std::size_t i = 0; i < d(); ++i) w_dec(i, j) /= n;
  }
}

Vector encode(const SaeModel& sae, std::span<const double> h) {
  require(h.size() == sae.d(), ErrorKind::DimensionMismatch, "encode: input dimension");
  Matrix row(1, h.size());
  std::copy(h.begin(), h.end(), row.row(0).begin());
  Matrix z(1, sae.m());
  kernels::serial::sae_encode_rows(row, sae.w_enc, sae.b_enc, sae.b_dec, z);
  return z.data();
}

Matrix encode_rows(const SaeModel& sae, const Matrix& h) {
  require(h.cols() == sae.d(), ErrorKind::DimensionMismatch, "encode: input dimension");
  Matrix z(h.rows(), sae.m());
  kernels::sae_encode_rows(h, sae.w_enc, sae.b_enc, sae.b_dec, z);
  return z;
}

Vector decode(const SaeModel& sae, std::span<const double> z) {
  require(z.size() == sae.m(), ErrorKind::DimensionMismatch, "decode: latent dimension");
  Vector out = matvec(sae.w_dec, z);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sae.b_dec[i];
  return out;
}

namespace {

std::vector<double> pack(const SaeModel& s) {
  std::vector<double> p;
  p.reserve(2 * s.m() * s.d() + s.m() + s.d());
  p.insert(p.end(), s.w_enc.data().begin(), s.w_enc.data().end());
  p.insert(p.end(), s.b_enc.begin(), s.b_enc.end());
  p.insert(p.end(), s.w_dec.data().begin(), s.w_dec.data().end());
  p.insert(p.end(), s.b_dec.begin(), s.b_dec.end());
  return p;
}

void unpack(std::span<const double> p, SaeModel& s) {
  auto it = p.begin();
  auto take = [&](std::vector<double>& dst) {
    std::copy(it, it + static_cast<long>(dst.size()), dst.begin());
    it += static_cast<long>(dst.size());
  };
  take(s.w_enc.data());
  take(s.b_enc);
  take(s.w_dec.data());
  take(s.b_dec);
}

}  // namespace

SaeModel train_sae(const Matrix& activations, const SaeTrainConfig& cfg) {
  require(activations.rows() > 0, ErrorKind::EmptyInput, "train_sae: no activations");
  require(cfg.m > 0 && cfg.steps >= 0 && cfg.learning_rate > 0.0 && cfg.l1_coeff >= 0.0,
          ErrorKind::ConfigError, "train_sae: invalid config");
  const std::size_t n = activations.rows(), d = activations.cols(), m = cfg.m;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SaeModel sae{Matrix(m, d), Vector(m, 0.0), Matrix(d, m), Vector(d, 0.0)};
  for (double& w : sae.w_dec.data()) w = normal(rng);
  sae.normalize_decoder_columns();
  sae.w_enc = sae.w_dec.transposed();
  kernels::serial::column_means(activations, sae.b_dec);

  std::vector<double> params = pack(sae);
  std::vector<double> grad(params.size());
  Adam opt(params.size(), cfg.learning_rate);
  BatchCursor batches(n, cfg.batch_size, cfg.seed ^ 0x5ae5ae5aeULL);

  SaeModel g{Matrix(m, d), Vector(m), Matrix(d, m), Vector(d)};
  for (int step = 0; step < cfg.steps; ++step) {
    auto rows = batches.next();
    const std::size_t b = rows.size();
    const double inv_b = 1.0 / static_cast<double>(b);
    Matrix h(b, d);
    for (std::size_t i = 0; i < b; ++i)
      std::copy(activations.row(rows[i]).begin(), activations.row(rows[i]).end(), h.row(i).begin());

    Matrix z = encode_rows(sae, h);
    Matrix recon = matmul_bt(z, sae.w_dec);  // b × d
    std::fill(g.w_enc.data().begin(), g.w_enc.data().end(), 0.0);
    std::fill(g.b_enc.begin(), g.b_enc.end(), 0.0);
    std::fill(g.w_dec.data().begin(), g.w_dec.data().end(), 0.0);
    std::fill(g.b_dec.begin(), g.b_dec.end(), 0.0);

    Vector grad_hat(d), centered(d), dpre(m);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        grad_hat[c] = 2.0 * (recon(i, c) + sae.b_dec[c] - h(i, c)) * inv_b;
        centered[c] = h(i, c) - sae.b_dec[c];
        g.b_dec[c] += grad_hat[c];
      }
      for (std::size_t j = 0; j < m; ++j) {
        const double zj = z(i, j);
        for (std::size_t c = 0; c < d; ++c) g.w_dec(c, j) += grad_hat[c] * zj;
        if (zj > 0.0) {
          double dz = cfg.l1_coeff * inv_b;
          for (std::size_t c = 0; c < d; ++c) dz += sae.w_dec(c, j) * grad_hat[c];
          dpre[j] = dz;
        } else {
          dpre[j] = 0.0;
        }
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (dpre[j] == 0.0) continue;
        g.b_enc[j] += dpre[j];
        auto wrow = g.w_enc.row(j);
        auto erow = sae.w_enc.row(j);
        for (std::size_t c = 0; c < d; ++c) {
          wrow[c] += dpre[j] * centered[c];
          g.b_dec[c] -= dpre[j] * erow[c];
        }
      }
    }

    grad = pack(g);
    opt.step(params, grad);
    unpack(params, sae);
    sae.normalize_decoder_columns();
    params = pack(sae);
    if (!all_finite(params)) fail(ErrorKind::DivergenceError, "SAE training diverged");
  }

  round_to_f32(sae.w_enc.data());
  round_to_f32(sae.b_enc);
  round_to_f32(sae.w_dec.data());
  round_to_f32(sae.b_dec);
  return sae;
}

SaeFitReport evaluate_sae(const SaeModel& sae, const Matrix& activations) {
  SaeFitReport r;
  const Matrix z = encode_rows(sae, activations);
  const std::size_t n = activations.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const Vector recon = decode(sae, z.row(i));
    r.mean_reconstruction_error += norm(subtract(recon, activations.row(i)));
    r.mean_input_norm += norm(activations.row(i));
    r.mean_active_features += static_cast<double>(
        std::count_if(z.row(i).begin(), z.row(i).end(), [](double v) { return v > 0.0; }));
  }
  r.mean_reconstruction_error /= static_cast<double>(n);
  r.mean_input_norm /= static_cast<double>(n);
  r.mean_active_features /= static_cast<double>(n);
  return r;
}

FeatureStats feature_stats(const SaeModel& sae, const ContrastDataset& data,
                           const SubspaceConfig& cfg) {
  require(!data.pairs.empty(), ErrorKind::EmptyInput, "feature_stats: empty dataset");
  return feature_stats(sae, data.reasoning_type, data.positives(), data.negatives(), cfg);
}

FeatureStats feature_stats(const SaeModel& sae, ReasoningType type, const Matrix& positives,
                           const Matrix& negatives, const SubspaceConfig& cfg) {
  require(positives.rows() > 0 && negatives.rows() > 0, ErrorKind::EmptyInput,
          "feature_stats: empty positive or negative set");
  require(cfg.epsilon >= 0.0, ErrorKind::ConfigError, "epsilon must be >= 0");
  FeatureStats s;
  s.reasoning_type = type;
  const std::size_t m = sae.m();
  s.mu_pos.assign(m, 0.0);
  s.mu_neg.assign(m, 0.0);
  kernels::column_mean_of_squares(encode_rows(sae, positives), s.mu_pos);
  kernels::column_mean_of_squares(encode_rows(sae, negatives), s.mu_neg);
  s.rho.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const double denom = s.mu_neg[j] + cfg.epsilon;
    if (s.mu_pos[j] == 0.0)
      s.rho[j] = 0.0;  // also covers 0/0 when epsilon = 0
    else if (denom == 0.0)
      s.rho[j] = std::numeric_limits<double>::infinity();
    else
      s.rho[j] = s.mu_pos[j] / denom;
  }
  s.mean_strength = s.mu_pos;
  return s;
}

double quantile_type7(std::span<const double> values, double alpha) {
  require(!values.empty(), ErrorKind::EmptyInput, "quantile of empty set");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::ConfigError, "quantile level outside [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = static_cast<double>(sorted.size() - 1) * alpha;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size() || frac == 0.0) return sorted[lo];
  if (sorted[lo + 1] == sorted[lo]) return sorted[lo];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::vector<std::size_t> select_features(const FeatureStats& stats, const SubspaceConfig& cfg,
                                         std::size_t max_features) {
  const std::size_t m = stats.rho.size();
  require(stats.mean_strength.size() == m, ErrorKind::DimensionMismatch, "inconsistent stats");
  if (std::all_of(stats.rho.begin(), stats.rho.end(), [](double r) { return r == 0.0; }))
    fail(ErrorKind::EmptySelection, "all contrastive ratios are zero");

  const double tau = cfg.threshold_mode == ThresholdMode::quantile
                         ? quantile_type7(stats.rho, cfg.quantile_alpha)
                         : cfg.quantile_alpha;
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < m; ++j)
    if (stats.rho[j] >= tau) candidates.push_back(j);
  if (candidates.empty()) fail(ErrorKind::EmptySelection, "no feature passes the ratio threshold");

  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return stats.mean_strength[a] > stats.mean_strength[b];
  });
  const std::size_t keep = std::min({cfg.K, candidates.size(), max_features});
  candidates.resize(keep);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

ReasoningSubspace build_subspace_from_columns(const Matrix& directions, ReasoningType type,
                                              std::vector<std::size_t> feature_ids) {
  require(directions.cols() > 0, ErrorKind::RankZero, "no directions supplied");
  const PivotedQr qr = householder_qr_pivoted(directions);
  const auto diag = qr.diagonal_magnitudes();
  const double top = diag.empty() ? 0.0 : diag.front();
  if (!(top > 0.0)) fail(ErrorKind::RankZero, "all subspace directions vanish");
  std::size_t keep = 0;
  while (keep < diag.size() && diag[keep] >= kRankTolerance * top) ++keep;

  ReasoningSubspace s;
  s.reasoning_type = type;
  s.feature_ids = std::move(feature_ids);
  s.basis = Matrix(directions.rows(), keep);
  for (std::size_t i = 0; i < directions.rows(); ++i)
    for (std::size_t c = 0; c < keep; ++c) s.basis(i, c) = qr.q(i, c);
  return s;
}

ReasoningSubspace build_subspace(const SaeModel& sae, std::span<const std::size_t> feature_ids,
                                 ReasoningType type) {
  require(!feature_ids.empty(), ErrorKind::RankZero, "empty feature set");
  Matrix v(sae.d(), feature_ids.size());
  for (std::size_t k = 0; k < feature_ids.size(); ++k) {
    require(feature_ids[k] < sae.m(), ErrorKind::DimensionMismatch, "feature id out of range");
    for (std::size_t i = 0; i < sae.d(); ++i) v(i, k) = sae.w_dec(i, feature_ids[k]);
  }
  return build_subspace_from_columns(v, type, {feature_ids.begin(), feature_ids.end()});
}

void write_sae(const SaeModel& sae, const std::filesystem::path& path) {
  json header = {{"m", sae.m()}, {"d", sae.d()},
                 {"tensors", {"w_enc", "b_enc", "w_dec", "b_dec"}}};
  BodyWriter body;
  body.matrix(sae.w_enc);
  body.f32(sae.b_enc);
  body.matrix(sae.w_dec);
  body.f32(sae.b_dec);
  write_container(path, "RVSA", header, body.bytes());
}

SaeModel read_sae(const std::filesystem::path& path) {
  Container c = read_container(path, "RVSA");
  std::size_t m = 0, d = 0;
  try {
    m = c.header.at("m").get<std::size_t>();
    d = c.header.at("d").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad SAE header: ") + e.what());
  }
  BodyReader body(c.body);
  SaeModel sae;
  sae.w_enc = body.matrix(m, d);
  sae.b_enc = body.f32(m);
  sae.w_dec = body.matrix(d, m);
  sae.b_dec = body.f32(d);
  body.expect_end();
  sae.validate();
  return sae;
}

void write_subspace(const ReasoningSubspace& s, const std::filesystem::path& path) {
  json header = {{"reasoning_type", to_string(s.reasoning_type)},
                 {"n_features", s.feature_ids.size()},
                 {"d", s.dim()},
                 {"rank", s.rank()}};
  BodyWriter body;
  std::vector<std::uint32_t> ids(s.feature_ids.begin(), s.feature_ids.end());
  body.u32(ids);
  body.matrix(s.basis);
  write_container(path, "RVSB", header, body.bytes());
}

ReasoningSubspace read_subspace(const std::filesystem::path& path) {
  Container c = read_container(path, "RVSB");
  ReasoningSubspace s;
  std::size_t n = 0, d = 0, k = 0;
  try {
    s.reasoning_type = parse_reasoning_type(c.header.at("reasoning_type").get<std::string>());
    n = c.header.at("n_features").get<std::size_t>();
    d = c.header.at("d").get<std::size_t>();
    k = c.header.at("rank").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad subspace header: ") + e.what());
  }
  BodyReader body(c.body);
  const auto ids = body.u32(n);
  s.feature_ids.assign(ids.begin(), ids.end());
  Matrix stored = body.matrix(d, k);
  body.expect_end();
  // float32 storage loses orthonormality at the 1e-7 level; restore it.
  ReasoningSubspace restored = build_subspace_from_columns(stored, s.reasoning_type, s.feature_ids);
  require(restored.rank() == k, ErrorKind::FormatError, "stored subspace basis is rank deficient");
  return restored;
}

}  // namespace rvec
