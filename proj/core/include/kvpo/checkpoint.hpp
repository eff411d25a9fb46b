// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint format, version 1. All integers are unsigned
// little-endian, reals are IEEE-754 binary64 little-endian.
//
//   offset  size  field
//   0       8     magic "KVPOCKPT"
//   8       4     format version (1)
//   12      8     iteration counter
//   20      4     segment count n
//           ...   n x { u32 name length, name bytes (UTF-8),
//                       u64 offset, u64 length }
//           8     parameter count P
//           8P    parameter values
//           1     EMA flag (0 or 1)
//           8P    EMA values, present iff flag == 1
//           8     configuration length c
//           c     run configuration as JSON text

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kvpo/params.hpp"

namespace kvpo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Params params;
  std::optional<std::vector<double>> ema;
  std::uint64_t iteration = 0;
  std::string config_json;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws ContractError on a malformed or truncated buffer.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kvpo
