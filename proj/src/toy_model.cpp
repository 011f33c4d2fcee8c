#include "rvec/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "rvec/container.hpp"
#include "rvec/error.hpp"
#include "toy_model_internal.hpp"

namespace rvec {

using nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;

void layer_norm(const Matrix& x, std::span<const double> g, std::span<const double> b, Matrix& out,
                detail::LnCache* cache) {
  const std::size_t t_len = x.rows(), d = x.cols();
  out = Matrix(t_len, d);
  if (cache) {
    cache->xhat = Matrix(t_len, d);
    cache->rstd.assign(t_len, 0.0);
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x(t, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (x(t, c) - mean) * (x(t, c) - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (x(t, c) - mean) * rstd;
      out(t, c) = xh * g[c] + b[c];
      if (cache) cache->xhat(t, c) = xh;
    }
    if (cache) cache->rstd[t] = rstd;
  }
}

/// out = x·W + bias (bias optional)
Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias = {}) {
  Matrix out = matmul(x, w);
  if (!bias.empty())
    for (std::size_t t = 0; t < out.rows(); ++t) axpy(1.0, bias, out.row(t));
  return out;
}

void check_hook(const ToyModelConfig& cfg, const HookPoint& p) {
  if (p.layer < 0 || p.layer >= cfg.n_layers)
    fail(ErrorKind::HookOutOfRange, "hook layer " + std::to_string(p.layer) + " out of range");
  if (p.site == HookSite::attn_head_out) {
    if (!p.head || *p.head < 0 || *p.head >= cfg.n_heads)
      fail(ErrorKind::HookOutOfRange, "attn_head_out hook needs a valid head index");
  } else if (p.head) {
    fail(ErrorKind::HookOutOfRange, "resid_post hook must not name a head");
  }
}

bool same_point(const HookPoint& a, const HookPoint& b) {
  return a.layer == b.layer && a.site == b.site && a.head == b.head;
}

}  // namespace

void ToyModelConfig::validate() const {
  require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && vocab >= 1 && max_seq >= 1,
          ErrorKind::ConfigError, "toy model dimensions must be >= 1");
  require(d_model % n_heads == 0, ErrorKind::ConfigError, "d_model must be divisible by n_heads");
}

ToyModel ToyModel::init(const ToyModelConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto vocab = static_cast<std::size_t>(config.vocab);
  std::mt19937_64 rng(config.seed);
  auto randn = [&](Matrix& m, double sd) {
    std::normal_distribution<double> normal(0.0, sd);
    for (double& v : m.data()) v = normal(rng);
  };
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_sd = sd / std::sqrt(2.0 * config.n_layers);

  ToyModel m;
  m.config = config;
  m.tok_emb = Matrix(vocab, d);
  m.pos_emb = Matrix(static_cast<std::size_t>(config.max_seq), d);
  randn(m.tok_emb, 1.0);
  randn(m.pos_emb, 0.5);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights w;
    w.ln1_g.assign(d, 1.0);
    w.ln1_b.assign(d, 0.0);
    w.wq = Matrix(d, d);
    w.wk = Matrix(d, d);
    w.wv = Matrix(d, d);
    w.wo = Matrix(d, d);
    randn(w.wq, sd);
    randn(w.wk, sd);
    randn(w.wv, sd);
    randn(w.wo, out_sd);
    w.ln2_g.assign(d, 1.0);
    w.ln2_b.assign(d, 0.0);
    w.w1 = Matrix(d, 4 * d);
    w.b1.assign(4 * d, 0.0);
    w.w2 = Matrix(4 * d, d);
    w.b2.assign(d, 0.0);
    randn(w.w1, sd);
    randn(w.w2, out_sd / 2.0);
    m.layers.push_back(std::move(w));
  }
  m.lnf_g.assign(d, 1.0);
  m.lnf_b.assign(d, 0.0);
  m.unembed = Matrix(d, vocab);
  randn(m.unembed, sd);
  m.for_each_tensor([](const std::string&, std::vector<double>& t) { round_to_f32(t); });
  return m;
}

ToyModel ToyModel::zeros_like(const ToyModel& model) {
  ToyModel z = model;
  z.for_each_tensor(
      [](const std::string&, std::vector<double>& t) { std::fill(t.begin(), t.end(), 0.0); });
  return z;
}

std::size_t ToyModel::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const std::vector<double>& t) { n += t.size(); });
  return n;
}

namespace detail {

ForwardResult forward_impl(const ToyModel& model, std::span<const std::uint32_t> tokens,
                           std::span<const HookPoint> reads, std::span<const WriteHook> writes,
                           std::span<const PatchHook> patches, ForwardCache* cache) {
  const ToyModelConfig& cfg = model.config;
  const std::size_t t_len = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto dh = static_cast<std::size_t>(cfg.d_head());
  const auto n_heads = static_cast<std::size_t>(cfg.n_heads);
  require(t_len >= 1, ErrorKind::EmptyInput, "forward: empty token sequence");
  require(t_len <= static_cast<std::size_t>(cfg.max_seq), ErrorKind::DimensionMismatch,
          "sequence longer than max_seq");

  for (const auto& r : reads) check_hook(cfg, r);
  for (const auto& w : writes) {
    check_hook(cfg, w.point);
    const std::size_t want = w.point.site == HookSite::resid_post ? d : dh;
    require(w.vector.size() == want, ErrorKind::DimensionMismatch, "write hook vector dimension");
  }
  for (const auto& p : patches) {
    check_hook(cfg, p.point);
    require(p.point.site == HookSite::attn_head_out, ErrorKind::HookOutOfRange,
            "patch hooks target attention heads");
    require(p.values.cols() == dh, ErrorKind::DimensionMismatch, "patch values dimension");
  }

  ForwardResult result;
  result.recorded.resize(reads.size());
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.assign(cfg.n_layers, {});
  }

  Matrix x(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    require(tokens[t] < static_cast<std::uint32_t>(cfg.vocab), ErrorKind::DimensionMismatch,
            "token id outside vocabulary");
    for (std::size_t c = 0; c < d; ++c)
      x(t, c) = model.tok_emb(tokens[t], c) + model.pos_emb(t, c);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = model.layers[l];
    LayerCache local;
    LayerCache& lc = cache ? cache->layers[l] : local;

    layer_norm(x, w.ln1_g, w.ln1_b, lc.a, cache ? &lc.ln1 : nullptr);
    lc.q = affine(lc.a, w.wq);
    lc.k = affine(lc.a, w.wk);
    lc.v = affine(lc.a, w.wv);
    lc.z = Matrix(t_len, d);
    lc.probs.assign(n_heads, Matrix(t_len, t_len));

    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * dh;
      Matrix& p = lc.probs[h];
      for (std::size_t t = 0; t < t_len; ++t) {
        double mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          double sc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) sc += lc.q(t, off + c) * lc.k(s, off + c);
          p(t, s) = sc * scale;
          mx = std::max(mx, p(t, s));
        }
        double denom = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          p(t, s) = std::exp(p(t, s) - mx);
          denom += p(t, s);
        }
        for (std::size_t s = 0; s <= t; ++s) p(t, s) /= denom;
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t s = 0; s <= t; ++s) acc += p(t, s) * lc.v(s, off + c);
          lc.z(t, off + c) = acc;
        }
      }

      const HookPoint here = HookPoint::head_out(l, static_cast<int>(h));
      for (const auto& ph : patches) {
        if (!same_point(ph.point, here)) continue;
        for (std::size_t i = 0; i < ph.values.rows(); ++i) {
          const std::size_t t = ph.from_position + i;
          if (t >= t_len) break;
          for (std::size_t c = 0; c < dh; ++c) lc.z(t, off + c) = ph.values(i, c);
        }
      }
      for (const auto& wh : writes) {
        if (!same_point(wh.point, here)) continue;
        for (std::size_t t = wh.from_position; t < t_len; ++t)
          for (std::size_t c = 0; c < dh; ++c) lc.z(t, off + c) += wh.vector[c];
      }
      for (std::size_t r = 0; r < reads.size(); ++r) {
        if (!same_point(reads[r], here)) continue;
        Matrix rec(t_len, dh);
        for (std::size_t t = 0; t < t_len; ++t)
          for (std::size_t c = 0; c < dh; ++c) rec(t, c) = lc.z(t, off + c);
        result.recorded[r] = std::move(rec);
      }
    }

    Matrix attn_out = affine(lc.z, w.wo);
    Matrix x1 = x;
    for (std::size_t i = 0; i < x1.data().size(); ++i) x1.data()[i] += attn_out.data()[i];

    layer_norm(x1, w.ln2_g, w.ln2_b, lc.m, cache ? &lc.ln2 : nullptr);
    lc.hpre = affine(lc.m, w.w1, w.b1);
    lc.hact = lc.hpre;
    for (double& v : lc.hact.data()) v = v > 0.0 ? v : 0.0;
    Matrix mlp_out = affine(lc.hact, w.w2, w.b2);
    x = std::move(x1);
    for (std::size_t i = 0; i < x.data().size(); ++i) x.data()[i] += mlp_out.data()[i];

    const HookPoint here = HookPoint::resid(l);
    for (const auto& wh : writes) {
      if (!same_point(wh.point, here)) continue;
      for (std::size_t t = wh.from_position; t < t_len; ++t) axpy(1.0, wh.vector, x.row(t));
    }
    for (std::size_t r = 0; r < reads.size(); ++r)
      if (same_point(reads[r], here)) result.recorded[r] = x;
  }

  Matrix f;
  layer_norm(x, model.lnf_g, model.lnf_b, f, cache ? &cache->lnf : nullptr);
  result.logits = affine(f, model.unembed);
  if (cache) cache->f = std::move(f);
  return result;
}

namespace {

/// out += aᵀ·b
void add_at_b(const Matrix& a, const Matrix& b, std::span<double> out, std::size_t out_cols) {
  for (std::size_t t = 0; t < a.rows(); ++t)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ati = a(t, i);
      if (ati == 0.0) continue;
      double* o = out.data() + i * out_cols;
      const double* brow = b.row(t).data();
      for (std::size_t j = 0; j < out_cols; ++j) o[j] += ati * brow[j];
    }
}

void add_colsum(const Matrix& a, std::span<double> out) {
  for (std::size_t t = 0; t < a.rows(); ++t) axpy(1.0, a.row(t), out);
}

Matrix layer_norm_backward(const Matrix& dy, const LnCache& cache, std::span<const double> g,
                           std::span<double> dg, std::span<double> db) {
  const std::size_t t_len = dy.rows(), d = dy.cols();
  Matrix dx(t_len, d);
  Vector dxhat(d);
  for (std::size_t t = 0; t < t_len; ++t) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dxhat[c] = dy(t, c) * g[c];
      dg[c] += dy(t, c) * cache.xhat(t, c);
      db[c] += dy(t, c);
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * cache.xhat(t, c);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c)
      dx(t, c) = cache.rstd[t] * (dxhat[c] - mean_dxhat - cache.xhat(t, c) * mean_dxhat_xhat);
  }
  return dx;
}

}  // namespace

void backward(const ToyModel& model, const ForwardCache& cache, const Matrix& dlogits,
              ToyModel& grad) {
  const ToyModelConfig& cfg = model.config;
  const std::size_t t_len = cache.tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto dh = static_cast<std::size_t>(cfg.d_head());
  const auto n_heads = static_cast<std::size_t>(cfg.n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  add_at_b(cache.f, dlogits, grad.unembed.data(), grad.unembed.cols());
  Matrix df = matmul_bt(dlogits, model.unembed);
  Matrix dx = layer_norm_backward(df, cache.lnf, model.lnf_g, grad.lnf_g, grad.lnf_b);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerWeights& w = model.layers[l];
    LayerWeights& gw = grad.layers[l];
    const LayerCache& lc = cache.layers[l];

    // MLP branch.
    add_at_b(lc.hact, dx, gw.w2.data(), d);
    add_colsum(dx, gw.b2);
    Matrix dh_act = matmul_bt(dx, w.w2);
    for (std::size_t i = 0; i < dh_act.data().size(); ++i)
      if (lc.hpre.data()[i] <= 0.0) dh_act.data()[i] = 0.0;
    add_at_b(lc.m, dh_act, gw.w1.data(), 4 * d);
    add_colsum(dh_act, gw.b1);
    Matrix dm = matmul_bt(dh_act, w.w1);
    Matrix dx1 = layer_norm_backward(dm, lc.ln2, w.ln2_g, gw.ln2_g, gw.ln2_b);
    for (std::size_t i = 0; i < dx1.data().size(); ++i) dx1.data()[i] += dx.data()[i];

    // Attention branch.
    add_at_b(lc.z, dx1, gw.wo.data(), d);
    Matrix dz = matmul_bt(dx1, w.wo);
    Matrix dq(t_len, d), dk(t_len, d), dv(t_len, d);
    Vector dp(t_len);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * dh;
      const Matrix& p = lc.probs[h];
      for (std::size_t t = 0; t < t_len; ++t) {
        double weighted = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += dz(t, off + c) * lc.v(s, off + c);
          dp[s] = acc;
          weighted += p(t, s) * acc;
          for (std::size_t c = 0; c < dh; ++c) dv(s, off + c) += p(t, s) * dz(t, off + c);
        }
        for (std::size_t s = 0; s <= t; ++s) {
          const double dscore = p(t, s) * (dp[s] - weighted) * scale;
          for (std::size_t c = 0; c < dh; ++c) {
            dq(t, off + c) += dscore * lc.k(s, off + c);
            dk(s, off + c) += dscore * lc.q(t, off + c);
          }
        }
      }
    }
    add_at_b(lc.a, dq, gw.wq.data(), d);
    add_at_b(lc.a, dk, gw.wk.data(), d);
    add_at_b(lc.a, dv, gw.wv.data(), d);
    Matrix da = matmul_bt(dq, w.wq);
    Matrix da_k = matmul_bt(dk, w.wk);
    Matrix da_v = matmul_bt(dv, w.wv);
    for (std::size_t i = 0; i < da.data().size(); ++i) da.data()[i] += da_k.data()[i] + da_v.data()[i];
    Matrix dx_attn = layer_norm_backward(da, lc.ln1, w.ln1_g, gw.ln1_g, gw.ln1_b);
    for (std::size_t i = 0; i < dx1.data().size(); ++i) dx1.data()[i] += dx_attn.data()[i];
    dx = std::move(dx1);
  }

  for (std::size_t t = 0; t < t_len; ++t) {
    axpy(1.0, dx.row(t), grad.tok_emb.row(cache.tokens[t]));
    axpy(1.0, dx.row(t), grad.pos_emb.row(t));
  }
}

}  // namespace detail

ForwardResult forward(const ToyModel& model, std::span<const std::uint32_t> tokens,
                      std::span<const HookPoint> reads, std::span<const WriteHook> writes,
                      std::span<const PatchHook> patches) {
  return detail::forward_impl(model, tokens, reads, writes, patches, nullptr);
}

namespace {

std::uint32_t pick_token(std::span<const double> logits, const DecodeOptions& decode,
                         std::mt19937_64& rng) {
  if (decode.kind == DecodeKind::greedy || decode.temperature <= 0.0) {
    return static_cast<std::uint32_t>(std::max_element(logits.begin(), logits.end()) -
                                      logits.begin());
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> weights(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    weights[i] = std::exp((logits[i] - mx) / decode.temperature);
    total += weights[i];
  }
  std::uniform_real_distribution<double> uniform(0.0, total);
  double u = uniform(rng);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return static_cast<std::uint32_t>(i);
    u -= weights[i];
  }
  return static_cast<std::uint32_t>(weights.size() - 1);
}

}  // namespace

Generation generate(const ToyModel& model, std::span<const std::uint32_t> prompt,
                    const GenerateOptions& options) {
  const ToyModelConfig& cfg = model.config;
  require(options.max_len >= 1, ErrorKind::ConfigError, "max_len must be >= 1");
  require(!prompt.empty(), ErrorKind::EmptyInput, "empty prompt");
  if (options.steering && (options.steering->layer < 0 || options.steering->layer >= cfg.n_layers))
    fail(ErrorKind::LayerOutOfRange, "steering layer out of range");
  int record_layer = options.record_layer.value_or(options.steering ? options.steering->layer + 1 : -1);
  if (record_layer < 0 || record_layer >= cfg.n_layers)
    fail(ErrorKind::LayerOutOfRange, "record layer " + std::to_string(record_layer) + " out of range");
  require(prompt.size() + options.max_len <= static_cast<std::size_t>(cfg.max_seq),
          ErrorKind::DimensionMismatch, "prompt + max_len exceeds max_seq");

  std::vector<WriteHook> writes;
  if (options.steering)
    writes.push_back({HookPoint::resid(options.steering->layer), options.steering->vector,
                      prompt.size()});

  std::vector<std::uint32_t> seq(prompt.begin(), prompt.end());
  std::mt19937_64 rng(options.decode.seed);
  for (std::size_t i = 0; i < options.max_len; ++i) {
    ForwardResult fr = forward(model, seq, {}, writes);
    seq.push_back(pick_token(fr.logits.row(seq.size() - 1), options.decode, rng));
    if (options.stop_token && seq.back() == *options.stop_token) break;
  }
  const std::size_t n_gen = seq.size() - prompt.size();

  // One more pass over the finished sequence records every generated position;
  // causal attention makes these identical to the incremental values.
  const HookPoint read = HookPoint::resid(record_layer);
  ForwardResult fr = forward(model, seq, std::span(&read, 1), writes);

  Generation g;
  g.tokens.assign(seq.begin() + static_cast<long>(prompt.size()), seq.end());
  g.trace.layer = record_layer;
  g.trace.variant = Variant::unsteered;
  g.trace.activations = Matrix(n_gen, static_cast<std::size_t>(cfg.d_model));
  for (std::size_t i = 0; i < n_gen; ++i) {
    auto src = fr.recorded[0].row(prompt.size() + i);
    std::copy(src.begin(), src.end(), g.trace.activations.row(i).begin());
  }
  g.trace.token_ids = g.tokens;
  return g;
}

std::vector<double> token_logprobs(const ToyModel& model, std::span<const std::uint32_t> tokens,
                                   std::size_t from_position,
                                   const std::optional<Steering>& steering) {
  require(from_position >= 1 && from_position <= tokens.size(), ErrorKind::ConfigError,
          "token_logprobs: from_position must be in [1, T]");
  std::vector<WriteHook> writes;
  if (steering) {
    if (steering->layer < 0 || steering->layer >= model.config.n_layers)
      fail(ErrorKind::LayerOutOfRange, "steering layer out of range");
    writes.push_back({HookPoint::resid(steering->layer), steering->vector, from_position});
  }
  ForwardResult fr = forward(model, tokens, {}, writes);
  std::vector<double> out;
  for (std::size_t i = from_position; i < tokens.size(); ++i) {
    auto row = fr.logits.row(i - 1);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    out.push_back(row[tokens[i]] - mx - std::log(total));
  }
  return out;
}

void write_model(const ToyModel& model, const std::filesystem::path& path) {
  const ToyModelConfig& c = model.config;
  json tensors = json::array();
  BodyWriter body;
  model.for_each_tensor([&](const std::string& name, const std::vector<double>& t) {
    tensors.push_back({{"name", name}, {"size", t.size()}});
    body.f32(t);
  });
  json header = {{"config",
                  {{"d_model", c.d_model},
                   {"n_layers", c.n_layers},
                   {"n_heads", c.n_heads},
                   {"vocab", c.vocab},
                   {"max_seq", c.max_seq},
                   {"seed", c.seed}}},
                 {"tensors", tensors}};
  write_container(path, "RVWT", header, body.bytes());
}

ToyModel read_model(const std::filesystem::path& path) {
  Container c = read_container(path, "RVWT");
  ToyModelConfig cfg;
  json tensors;
  try {
    const json& jc = c.header.at("config");
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.n_heads = jc.at("n_heads").get<int>();
    cfg.vocab = jc.at("vocab").get<int>();
    cfg.max_seq = jc.at("max_seq").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();
    tensors = c.header.at("tensors");
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad model header: ") + e.what());
  }
  cfg.validate();
  ToyModel model = ToyModel::init(cfg);
  BodyReader body(c.body);
  std::size_t index = 0;
  model.for_each_tensor([&](const std::string& name, std::vector<double>& t) {
    if (index >= tensors.size() || tensors[index].value("name", "") != name ||
        tensors[index].value("size", std::size_t{0}) != t.size())
      fail(ErrorKind::FormatError, "unexpected tensor layout at " + name);
    t = body.f32(t.size());
    ++index;
  });
  body.expect_end();
  return model;
}

}  // namespace rvec
