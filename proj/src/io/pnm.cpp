// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/pnm.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bevsim/common.hpp"

namespace bevsim::io {

namespace {

void write_pnm(const std::filesystem::path& path, const char* magic, int width, int height, int channels,
               std::span<const uint8_t> bytes) {
  require(width > 0 && height > 0, "image size must be positive");
  require(bytes.size() == static_cast<size_t>(width) * height * channels, "{}: {} bytes for a {}x{}x{} image",
          path.string(), bytes.size(), width, height, channels);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), "cannot open {} for writing", path.string());
  const std::string header = fmt::format("{}\n{} {}\n255\n", magic, width, height);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(os.good(), "write to {} failed", path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const uint8_t> gray) {
  write_pnm(path, "P5", width, height, 1, gray);
}

void write_ppm(const std::filesystem::path& path, int width, int height, std::span<const uint8_t> rgb) {
  write_pnm(path, "P6", width, height, 3, rgb);
}

std::vector<uint8_t> to_gray8(std::span<const double> values) {
  std::vector<uint8_t> out(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<uint8_t>(std::clamp(std::round(255.0 * values[i]), 0.0, 255.0));
  return out;
}

std::vector<uint8_t> minmax_gray8(std::span<const double> values, MinMax* range) {
  MinMax r;
  if (!values.empty()) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    r = {*lo, *hi};
  }
  if (range) *range = r;
  std::vector<uint8_t> out(values.size(), 128);
  if (!(r.hi > r.lo)) return out;
  for (size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<uint8_t>(std::clamp(std::round(255.0 * (values[i] - r.lo) / (r.hi - r.lo)), 0.0, 255.0));
  return out;
}

}  // namespace bevsim::io
