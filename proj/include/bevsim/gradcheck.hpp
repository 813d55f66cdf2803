// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bevsim/tensor.hpp"

namespace bevsim::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  int64_t worst_index = -1;
  std::vector<int64_t> probed;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Relative error with a max(|a|, |b|, 1e-8) denominator.
double relative_error(double analytic, double numeric);

// Compares backward() gradients of fn at x against central differences
// (fn(x + eps) - fn(x - eps)) / 2 eps, element by element. fn must be
// deterministic and read x through the graph. When `indices` is given only
// those elements are probed. x must be a leaf that requires grad; its data is
// restored afterwards and its grad is left holding the analytic gradient.
GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x, double eps,
                                  double rel_tol, std::optional<std::span<const int64_t>> indices = std::nullopt);

// A single scalar entry of some leaf tensor, probed against the gradient of
// a loss that closes over it.
struct Probe {
  Tensor param;
  int64_t index = 0;
  std::string label;
};

struct ProbeResult {
  std::string label;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool pass = false;
};

// Runs loss_fn once with gradients, then twice per probe under no-grad with
// the entry shifted by +eps and -eps. Probed tensors must require grad; their
// grads are zeroed before the analytic pass.
std::vector<ProbeResult> probe_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Probe>& probes,
                                         double eps, double rel_tol);

}  // namespace bevsim::ad
