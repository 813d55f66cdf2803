// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Binary PGM (P5) and PPM (P6) writers.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace bevsim::io {

void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const uint8_t> gray);
void write_ppm(const std::filesystem::path& path, int width, int height, std::span<const uint8_t> rgb);

// round(255 v) clipped to [0, 255].
std::vector<uint8_t> to_gray8(std::span<const double> values);

struct MinMax {
  double lo = 0.0, hi = 0.0;
};
// Min-max scaling to [0, 255]; a constant input maps to 128.
std::vector<uint8_t> minmax_gray8(std::span<const double> values, MinMax* range = nullptr);

}  // namespace bevsim::io
