#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvec/linalg.hpp"
#include "rvec/trace_store.hpp"

namespace rvec {

struct ToyModelConfig {
  int d_model = 32;
  int n_layers = 4;
  int n_heads = 4;
  int vocab = 64;
  int max_seq = 32;
  std::uint64_t seed = 0;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

enum class HookSite { resid_post, attn_head_out };

/// A read/write site: a block's residual output, or one head's output
/// (the head's d_head-dimensional mix of values, before the output projection).
struct HookPoint {
  int layer = 0;
  HookSite site = HookSite::resid_post;
  std::optional<int> head;

  static HookPoint resid(int layer) { return {layer, HookSite::resid_post, std::nullopt}; }
  static HookPoint head_out(int layer, int head) { return {layer, HookSite::attn_head_out, head}; }
};

/// Adds `vector` at every position ≥ from_position.
struct WriteHook {
  HookPoint point;
  Vector vector;
  std::size_t from_position = 0;
};

/// Replaces a head's output at positions from_position .. from_position + rows − 1.
struct PatchHook {
  HookPoint point;
  Matrix values;  // rows × d_head
  std::size_t from_position = 0;
};

struct ForwardResult {
  Matrix logits;                 // T × vocab
  std::vector<Matrix> recorded;  // one per read hook, T × (d_model | d_head)
};

struct LayerWeights {
  Vector ln1_g, ln1_b;
  Matrix wq, wk, wv, wo;  // d × d, applied as x·W
  Vector ln2_g, ln2_b;
  Matrix w1;  // d × 4d
  Vector b1;
  Matrix w2;  // 4d × d
  Vector b2;
};

/// Pre-norm residual transformer with learned positional embeddings.
struct ToyModel {
  ToyModelConfig config;
  Matrix tok_emb;  // vocab × d
  Matrix pos_emb;  // max_seq × d
  std::vector<LayerWeights> layers;
  Vector lnf_g, lnf_b;
  Matrix unembed;  // d × vocab

  /// Deterministic random initialization from config.seed.
  static ToyModel init(const ToyModelConfig& config);
  /// Same shapes, every tensor zero (used as a gradient accumulator).
  static ToyModel zeros_like(const ToyModel& model);

  /// Visits (name, storage) for every parameter tensor in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f);
  template <typename F>
  void for_each_tensor(F&& f) const;

  std::size_t parameter_count() const;
};

/// Deterministic forward pass. Write hooks add their vector (post-addition
/// values are what read hooks record); patch hooks overwrite head outputs.
/// Throws HookOutOfRange / DimensionMismatch.
ForwardResult forward(const ToyModel& model, std::span<const std::uint32_t> tokens,
                      std::span<const HookPoint> reads = {}, std::span<const WriteHook> writes = {},
                      std::span<const PatchHook> patches = {});

enum class DecodeKind { greedy, sample };

struct DecodeOptions {
  DecodeKind kind = DecodeKind::greedy;
  double temperature = 1.0;  // 0 behaves as greedy
  std::uint64_t seed = 0;

  static DecodeOptions greedy() { return {}; }
  static DecodeOptions sample(double temperature, std::uint64_t seed) {
    return {DecodeKind::sample, temperature, seed};
  }
};

struct Steering {
  int layer = 0;
  Vector vector;  // added as-is at resid_post of `layer`
};

struct GenerateOptions {
  std::size_t max_len = 16;
  /// Generation ends after this token is emitted (it is kept in the output).
  std::optional<std::uint32_t> stop_token;
  DecodeOptions decode;
  std::optional<Steering> steering;
  /// Layer whose resid_post is recorded; defaults to steering layer + 1 and
  /// must be given when there is no steering.
  std::optional<int> record_layer;
};

struct Generation {
  std::vector<std::uint32_t> tokens;  // generated tokens only
  ActivationTrace trace;              // one row per generated token
};

/// Autoregressive generation. Steering is added only at generated positions;
/// the trace holds resid_post of the record layer at generated positions.
/// Throws LayerOutOfRange.
Generation generate(const ToyModel& model, std::span<const std::uint32_t> prompt,
                    const GenerateOptions& options);

/// log P(tokens[i] | tokens[<i]) for i in [from_position, T), with optional
/// steering applied at positions ≥ from_position.
std::vector<double> token_logprobs(const ToyModel& model, std::span<const std::uint32_t> tokens,
                                   std::size_t from_position,
                                   const std::optional<Steering>& steering = std::nullopt);

void write_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel read_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename F>
void ToyModel::for_each_tensor(F&& f) {
  f(std::string("tok_emb"), tok_emb.data());
  f(std::string("pos_emb"), pos_emb.data());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerWeights& w = layers[l];
    f(p + "ln1_g", w.ln1_g);
    f(p + "ln1_b", w.ln1_b);
    f(p + "wq", w.wq.data());
    f(p + "wk", w.wk.data());
    f(p + "wv", w.wv.data());
    f(p + "wo", w.wo.data());
    f(p + "ln2_g", w.ln2_g);
    f(p + "ln2_b", w.ln2_b);
    f(p + "w1", w.w1.data());
    f(p + "b1", w.b1);
    f(p + "w2", w.w2.data());
    f(p + "b2", w.b2);
  }
  f(std::string("lnf_g"), lnf_g);
  f(std::string("lnf_b"), lnf_b);
  f(std::string("unembed"), unembed.data());
}

template <typename F>
void ToyModel::for_each_tensor(F&& f) const {
  const_cast<ToyModel*>(this)->for_each_tensor(
      [&](const std::string& name, std::vector<double>& t) {
        f(name, static_cast<const std::vector<double>&>(t));
      });
}

}  // namespace rvec
