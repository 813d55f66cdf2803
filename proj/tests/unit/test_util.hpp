// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "bevsim/gradcheck.hpp"
#include "bevsim/tensor.hpp"

namespace bevsim::testing {

inline ad::Tensor random_tensor(const ad::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                bool grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<size_t>(ad::numel(shape)));
  for (auto& x : v) x = dist(rng);
  ad::Tensor t(shape, std::move(v));
  t.set_requires_grad(grad);
  return t;
}

// Weighted sum with fixed random weights: a scalar that depends on every
// output element with distinct sensitivities.
inline ad::Tensor probe_loss(const ad::Tensor& y, uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(y.shape(), rng, -1.0, 1.0, false);
  return ad::sum(ad::mul(y, w));
}

inline ad::GradCheckReport check(const std::function<ad::Tensor(const ad::Tensor&)>& f, ad::Tensor x,
                                 double rel_tol = 1e-4) {
  return ad::finite_diff_check([&](const ad::Tensor& v) { return probe_loss(f(v)); }, x, 1e-5, rel_tol);
}

}  // namespace bevsim::testing
