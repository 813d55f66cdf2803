// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "bevsim/harness.hpp"

namespace bevsim::harness {

Adam::Adam(nn::ParamList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k].tensor;
    const auto g = w.grad();
    if (g.empty()) continue;  // not reached by this batch
    auto x = w.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
  nn::zero_grads(params_);
}

double scheduled_lr(const std::string& schedule, double lr, int64_t t, int64_t total) {
  if (schedule == "constant" || total <= 0) return lr;
  require(schedule == "cosine", "unknown learning-rate schedule '{}'", schedule);
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  return 0.5 * lr * (1.0 + std::cos(kPi * frac));
}

}  // namespace bevsim::harness
