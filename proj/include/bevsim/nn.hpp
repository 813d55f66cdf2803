// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Small layer building blocks on top of the tensor library. A module owns
// leaf tensors; params() lists them under dotted names so optimisers and
// checkpoints can address them.

#pragma once

#include <string>
#include <vector>

#include "bevsim/rng.hpp"
#include "bevsim/tensor.hpp"

namespace bevsim::nn {

using ad::Tensor;

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// U(-bound, bound) leaf that requires grad.
Tensor uniform_param(const ad::Shape& shape, double bound, Rng& rng);
Tensor zero_param(const ad::Shape& shape);
Tensor constant_param(const ad::Shape& shape, double value);

int64_t param_count(const ParamList& params);
void set_requires_grad(const ParamList& params, bool value);
void zero_grads(const ParamList& params);

// y = x W + b for x [N x in]; W [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng);
  static Linear zeros(int64_t in, int64_t out);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, ParamList& out) const;
};

// Same-padding convolution with odd kernel and stride 1.
struct Conv2d {
  Tensor weight;  // [out x in x k x k]
  Tensor bias;    // [out]
  int pad = 0;

  Conv2d() = default;
  Conv2d(int64_t in, int64_t out, int kernel, Rng& rng);
  static Conv2d zeros(int64_t in, int64_t out, int kernel);

  int64_t in_channels() const { return weight.dim(1); }
  int64_t out_channels() const { return weight.dim(0); }
  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, ParamList& out) const;
};

}  // namespace bevsim::nn
