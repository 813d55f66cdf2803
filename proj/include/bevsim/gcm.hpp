// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Deformable self-attention over a single feature map, stacked into the
// UV-plane and BEV-plane geometry compensation blocks.

#pragma once

#include <vector>

#include "bevsim/json_util.hpp"
#include "bevsim/nn.hpp"

namespace bevsim::gcm {

using ad::Tensor;

struct GcmConfig {
  int heads = 2;
  int points = 4;
  int layers = 2;
  double init_radius = 0.1;
};

json to_json(const GcmConfig& c);
GcmConfig gcm_config_from_json(const json& j, const std::string& section);

// [H*W x 2] normalised (row, col) cell centres, row-major.
Tensor reference_grid(int64_t h, int64_t w);

// Sampling locations and attention weights of one forward pass.
struct AttentionTrace {
  std::vector<double> locations;  // [N x M x K x 2], (row, col)
  std::vector<double> weights;    // [N x M x K]
};

struct DeformAttn {
  int heads = 2;
  int points = 4;
  nn::Linear query, offset, attention, value, output;
  Tensor radius;  // [1]

  DeformAttn() = default;
  // Offset head and output projection start at zero, so the layer is the
  // identity until trained.
  DeformAttn(int64_t channels, int heads, int points, double init_radius, Rng& rng);

  int64_t channels() const { return value.weight.dim(0); }
  Tensor operator()(const Tensor& f, AttentionTrace* trace = nullptr) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
  // Replaces the zero-initialised weights with small random values.
  void randomize(Rng& rng, double scale);
};

struct GcmStack {
  std::vector<DeformAttn> layers;

  GcmStack() = default;
  GcmStack(int64_t channels, const GcmConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& f, std::vector<AttentionTrace>* traces = nullptr) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
  void randomize(Rng& rng, double scale);
};

}  // namespace bevsim::gcm
