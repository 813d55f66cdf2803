// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "bevsim/scene.hpp"

namespace bevsim {

inline constexpr int kRegChannels = 8;  // dx, dy, z, log l, log w, log h, sin yaw, cos yaw

struct Detection {
  scene::Box3D box;
  int class_id = 0;
  double confidence = 0.0;
  int iy = 0, ix = 0;                      // BEV cell of the peak
  std::array<double, kRegChannels> reg{};  // raw regression vector at the peak
  std::vector<double> class_probs;         // per-class sigmoid scores at the peak
};

}  // namespace bevsim
