// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/bsdt.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace bevsim::io {

namespace {

constexpr std::array<char, 4> kMagic{'B', 'S', 'D', 'T'};

void read_exact(std::istream& is, char* dst, size_t n, const std::string& origin) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) fail("{}: truncated tensor record", origin);
}

uint64_t to_le(uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

}  // namespace

void put_u32(std::ostream& os, uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

uint32_t get_u32(std::istream& is, const std::string& origin) {
  std::array<unsigned char, 4> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), 4, origin);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void write_tensor(std::ostream& os, const ad::Tensor& t) {
  require(t.defined(), "cannot serialise an undefined tensor");
  require(t.rank() <= 255, "tensor rank {} exceeds the record limit", t.rank());
  os.write(kMagic.data(), 4);
  os.put(static_cast<char>(kBsdtVersion));
  os.put(static_cast<char>(t.rank()));
  for (int64_t e : t.shape()) {
    require(e <= 0xffffffffLL, "extent {} does not fit a u32", e);
    put_u32(os, static_cast<uint32_t>(e));
  }
  std::vector<uint64_t> raw(static_cast<size_t>(t.numel()));
  const auto d = t.data();
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_le(std::bit_cast<uint64_t>(d[i]));
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
}

ad::Tensor read_tensor(std::istream& is, const std::string& origin) {
  std::array<char, 4> magic{};
  read_exact(is, magic.data(), 4, origin);
  if (magic != kMagic) fail("{}: bad tensor magic", origin);
  char version = 0;
  char rank = 0;
  read_exact(is, &version, 1, origin);
  if (static_cast<uint8_t>(version) != kBsdtVersion)
    fail("{}: unsupported tensor version {}", origin, static_cast<int>(static_cast<uint8_t>(version)));
  read_exact(is, &rank, 1, origin);
  ad::Shape shape;
  for (int i = 0; i < static_cast<uint8_t>(rank); ++i) {
    const uint32_t e = get_u32(is, origin);
    if (e == 0) fail("{}: zero extent in tensor record", origin);
    shape.push_back(e);
  }
  if (shape.empty()) fail("{}: rank-0 tensor record", origin);
  std::vector<uint64_t> raw(static_cast<size_t>(ad::numel(shape)));
  read_exact(is, reinterpret_cast<char*>(raw.data()), raw.size() * 8, origin);
  std::vector<double> data(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) data[i] = std::bit_cast<double>(to_le(raw[i]));
  return ad::Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const ad::Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open {} for writing", path.string());
  write_tensor(os, t);
  require(static_cast<bool>(os), "write to {} failed", path.string());
}

ad::Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open {}", path.string());
  return read_tensor(is, path.string());
}

}  // namespace bevsim::io
