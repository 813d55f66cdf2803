// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bevsim::ad {

double relative_error(double analytic, double numeric) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) return std::numeric_limits<double>::infinity();
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::vector<ProbeResult> probe_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Probe>& probes,
                                         double eps, double rel_tol) {
  require(eps > 0.0, "finite difference step must be positive, got {}", eps);
  for (const auto& p : probes) {
    require(p.param.requires_grad(), "probed tensor '{}' does not require grad", p.label);
    require(p.index >= 0 && p.index < p.param.numel(), "probe index {} outside '{}' of {} elements", p.index,
            p.label, p.param.numel());
  }
  for (auto p : probes) p.param.zero_grad();
  Graph::current().clear();
  const Tensor loss = loss_fn();
  backward(loss);

  std::vector<ProbeResult> results;
  results.reserve(probes.size());
  NoGradGuard no_grad;
  for (auto p : probes) {
    ProbeResult r;
    r.label = p.label;
    r.index = p.index;
    r.analytic = p.param.has_grad() ? p.param.grad()[p.index] : 0.0;
    double& slot = p.param.mutable_data()[p.index];
    const double saved = slot;
    slot = saved + eps;
    const double up = loss_fn().item();
    slot = saved - eps;
    const double down = loss_fn().item();
    slot = saved;
    r.numeric = (up - down) / (2.0 * eps);
    r.rel_err = relative_error(r.analytic, r.numeric);
    r.pass = std::isfinite(r.rel_err) && r.rel_err <= rel_tol;
    results.push_back(r);
  }
  return results;
}

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x, double eps,
                                  double rel_tol, std::optional<std::span<const int64_t>> indices) {
  std::vector<int64_t> idx;
  if (indices) {
    idx.assign(indices->begin(), indices->end());
  } else {
    idx.resize(static_cast<size_t>(x.numel()));
    std::iota(idx.begin(), idx.end(), 0);
  }
  std::vector<Probe> probes;
  probes.reserve(idx.size());
  for (int64_t i : idx) probes.push_back({x, i, "x"});
  const auto results = probe_gradients([&] { return fn(x); }, probes, eps, rel_tol);

  GradCheckReport report;
  for (const auto& r : results) {
    report.probed.push_back(r.index);
    report.analytic.push_back(r.analytic);
    report.numeric.push_back(r.numeric);
    const double err = std::isfinite(r.rel_err) ? r.rel_err : std::numeric_limits<double>::infinity();
    if (report.worst_index < 0 || err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_index = r.index;
    }
    report.pass = report.pass && r.pass;
  }
  return report;
}

}  // namespace bevsim::ad
