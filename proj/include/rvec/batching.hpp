#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace rvec {

/// Fisher–Yates shuffle driven by a caller-owned engine.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
}

/// Yields mini-batches of indices from reshuffled passes over [0, n).
/// batch_size 0 (or ≥ n) means full batch in natural order, never shuffled.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(batch_size == 0 || batch_size >= n ? n : batch_size), rng_(seed), order_(n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n_;  // forces a shuffle on first use
  }

  bool full_batch() const { return batch_ == n_; }
  std::size_t batches_per_pass() const { return (n_ + batch_ - 1) / batch_; }

  /// Next batch; the final batch of a pass may be short.
  std::span<const std::size_t> next() {
    if (pos_ >= n_) {
      if (!full_batch()) shuffle_indices(order_, rng_);
      pos_ = 0;
    }
    const std::size_t take = std::min(batch_, n_ - pos_);
    std::span<const std::size_t> out(order_.data() + pos_, take);
    pos_ += take;
    return out;
  }

 private:
  std::size_t n_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_;
};

}  // namespace rvec
