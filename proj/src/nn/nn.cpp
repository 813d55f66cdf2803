// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/nn.hpp"

#include <cmath>

namespace bevsim::nn {

Tensor uniform_param(const ad::Shape& shape, double bound, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(ad::numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  Tensor t(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor zero_param(const ad::Shape& shape) { return constant_param(shape, 0.0); }

Tensor constant_param(const ad::Shape& shape, double value) {
  Tensor t = Tensor::full(shape, value);
  t.set_requires_grad(true);
  return t;
}

int64_t param_count(const ParamList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void set_requires_grad(const ParamList& params, bool value) {
  for (auto p : params) p.tensor.set_requires_grad(value);
}

void zero_grads(const ParamList& params) {
  for (auto p : params) p.tensor.zero_grad();
}

Linear::Linear(int64_t in, int64_t out, Rng& rng) {
  const double fan_in = static_cast<double>(in);
  weight = uniform_param({in, out}, std::sqrt(6.0 / fan_in), rng);
  bias = uniform_param({out}, 1.0 / std::sqrt(fan_in), rng);
}

Linear Linear::zeros(int64_t in, int64_t out) {
  Linear l;
  l.weight = zero_param({in, out});
  l.bias = zero_param({out});
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return ad::add_bias(ad::matmul(x, weight), bias, 1); }

void Linear::params(const std::string& prefix, ParamList& out) const {
  out.push_back({join(prefix, "weight"), weight});
  out.push_back({join(prefix, "bias"), bias});
}

Conv2d::Conv2d(int64_t in, int64_t out, int kernel, Rng& rng) : pad(kernel / 2) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  weight = uniform_param({out, in, kernel, kernel}, std::sqrt(6.0 / fan_in), rng);
  bias = uniform_param({out}, 1.0 / std::sqrt(fan_in), rng);
}

Conv2d Conv2d::zeros(int64_t in, int64_t out, int kernel) {
  Conv2d c;
  c.pad = kernel / 2;
  c.weight = zero_param({out, in, kernel, kernel});
  c.bias = zero_param({out});
  return c;
}

Tensor Conv2d::operator()(const Tensor& x) const {
  require(x.rank() == 3 && x.dim(0) == in_channels(), "conv expects {} input channels, got shape {}", in_channels(),
          ad::to_string(x.shape()));
  return ad::conv2d(x, weight, bias, 1, pad);
}

void Conv2d::params(const std::string& prefix, ParamList& out) const {
  out.push_back({join(prefix, "weight"), weight});
  out.push_back({join(prefix, "bias"), bias});
}

}  // namespace bevsim::nn
