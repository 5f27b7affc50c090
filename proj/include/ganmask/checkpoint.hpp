// Copyright 2026 The GanMask Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Checkpoint file: a flat list of named tensors.
//
//   magic    8 bytes  "GMCKPT\0\1"
//   u32      format version
//   u8       precision tag (4 = float32, 8 = float64), 3 bytes padding
//   u32 + s  engine version string
//   u32      entry count
//   entry:   u32 name length, name bytes, u32 rank, u64 dims[rank],
//            numel scalars of the tagged precision
//
// All integers and scalars are little-endian.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ganmask/tensor.hpp"

namespace ganmask {

inline constexpr char kEngineVersion[] = "ganmask-0.1.0";
inline constexpr std::uint32_t kCheckpointFormat = 1;

template <typename T>
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<T> values;
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!is) throw ContractError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

inline const char kMagic[8] = {'G', 'M', 'C', 'K', 'P', 'T', '\0', '\1'};

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<NamedTensor<T>>& entries) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  GANMASK_REQUIRE(os.good(), ContractError, "checkpoint: cannot open '", path, "' for writing");
  os.write(detail::kMagic, 8);
  detail::put_le<std::uint32_t>(os, kCheckpointFormat);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));
  for (int i = 0; i < 3; ++i) detail::put_le<std::uint8_t>(os, 0);
  const std::string version = kEngineVersion;
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(version.size()));
  os.write(version.data(), static_cast<std::streamsize>(version.size()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    GANMASK_REQUIRE(numel_of(e.shape) == e.values.size(), DimensionError, "checkpoint: entry '",
                    e.name, "' shape ", shape_str(e.shape), " holds ", e.values.size(), " values");
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_le<std::uint64_t>(os, d);
    for (T v : e.values) detail::put_le<T>(os, v);
  }
  GANMASK_REQUIRE(os.good(), ContractError, "checkpoint: write to '", path, "' failed");
}

template <typename T>
std::vector<NamedTensor<T>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  GANMASK_REQUIRE(is.good(), ContractError, "checkpoint: cannot open '", path, "'");
  char magic[8];
  is.read(magic, 8);
  GANMASK_REQUIRE(is && std::memcmp(magic, detail::kMagic, 8) == 0, ContractError,
                  "checkpoint: '", path, "' is not a checkpoint file");
  const auto format = detail::get_le<std::uint32_t>(is);
  GANMASK_REQUIRE(format == kCheckpointFormat, ContractError, "checkpoint: unsupported format ",
                  format);
  const auto precision = detail::get_le<std::uint8_t>(is);
  for (int i = 0; i < 3; ++i) detail::get_le<std::uint8_t>(is);
  GANMASK_REQUIRE(precision == sizeof(T), ContractError, "checkpoint: stored precision is ",
                  int(precision) * 8, "-bit, requested ", sizeof(T) * 8, "-bit");
  const auto vlen = detail::get_le<std::uint32_t>(is);
  std::string version(vlen, '\0');
  is.read(version.data(), vlen);
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<NamedTensor<T>> out(count);
  for (auto& e : out) {
    const auto nlen = detail::get_le<std::uint32_t>(is);
    e.name.resize(nlen);
    is.read(e.name.data(), nlen);
    const auto rank = detail::get_le<std::uint32_t>(is);
    e.shape.resize(rank);
    for (auto& d : e.shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is));
    e.values.resize(numel_of(e.shape));
    for (auto& v : e.values) v = detail::get_le<T>(is);
  }
  return out;
}

}  // namespace ganmask
