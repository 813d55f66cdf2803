// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// "BSDT" tensor records: bytes 'B' 'S' 'D' 'T', u8 version (1), u8 rank,
// rank x u32 little-endian extents, then the values as little-endian
// IEEE-754 doubles in row-major order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "bevsim/tensor.hpp"

namespace bevsim::io {

inline constexpr uint8_t kBsdtVersion = 1;

void write_tensor(std::ostream& os, const ad::Tensor& t);
// `origin` names the source in error messages.
ad::Tensor read_tensor(std::istream& is, const std::string& origin);

void save_tensor(const std::filesystem::path& path, const ad::Tensor& t);
ad::Tensor load_tensor(const std::filesystem::path& path);

// Little-endian scalar helpers shared by the container formats.
void put_u32(std::ostream& os, uint32_t v);
uint32_t get_u32(std::istream& is, const std::string& origin);

}  // namespace bevsim::io
