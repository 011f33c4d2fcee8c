#pragma once

// Forward activations kept for backpropagation; only toy_train.cpp needs these.

#include <vector>

#include "rvec/toy_model.hpp"

namespace rvec::detail {

struct LnCache {
  Matrix xhat;
  Vector rstd;
};

struct LayerCache {
  LnCache ln1;
  Matrix a, q, k, v;
  std::vector<Matrix> probs;  // per head, T × T (lower triangular)
  Matrix z;                   // concatenated head outputs, T × d
  LnCache ln2;
  Matrix m, hpre, hact;
};

struct ForwardCache {
  std::vector<std::uint32_t> tokens;
  std::vector<LayerCache> layers;
  LnCache lnf;
  Matrix f;
};

ForwardResult forward_impl(const ToyModel& model, std::span<const std::uint32_t> tokens,
                           std::span<const HookPoint> reads, std::span<const WriteHook> writes,
                           std::span<const PatchHook> patches, ForwardCache* cache);

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
void backward(const ToyModel& model, const ForwardCache& cache, const Matrix& dlogits,
              ToyModel& grad);

}  // namespace rvec::detail
