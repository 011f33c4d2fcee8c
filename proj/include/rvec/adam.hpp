#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace rvec {

/// Adam with bias-corrected moments over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n_params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n_params, 0.0),
        v_(n_params, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace rvec
