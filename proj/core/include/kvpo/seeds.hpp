// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace kvpo {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent random streams derived from one master seed.
enum class SeedStream : std::uint64_t {
  block_noise = 1,
  routing = 2,
  pivot = 3,
  iteration = 4,
  local_window = 5,
};

/// Counter-based derivation: seed = mix(mix(mix(master) ^ stream) ^ counter).
/// Per-block noise for block b of a group is derive_seed(noise_master,
/// SeedStream::block_noise, b), so every member of a group sees the same x_T.
inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream,
                                 std::uint64_t counter) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return splitmix64(h ^ counter);
}

}  // namespace kvpo
