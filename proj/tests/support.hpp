// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit tests.

#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kvpo/chr.hpp"
#include "kvpo/flowgen.hpp"
#include "kvpo/seeds.hpp"

namespace kvpo::testing {

inline GeneratorConfig small_config(std::size_t hidden = 8) {
  GeneratorConfig c;
  c.shape = NetShape{4, hidden, 3};
  return c;
}

inline Generator make_generator(const GeneratorConfig& c = GeneratorConfig{},
                                std::uint64_t prompt_seed = 7) {
  return Generator(c, gaussian_noise(prompt_seed, c.shape.prompt_dim));
}

inline Params random_params(const Generator& gen, std::uint64_t seed) {
  return param_init(gen.net().network_spec(), seed);
}

inline GroupSpec group_spec(int pivot, int window, int branches, std::uint64_t seed) {
  GroupSpec s;
  s.pivot = pivot;
  s.window = window;
  s.num_blocks = pivot + window - 1;
  s.branches = branches;
  s.seeds = GroupSeeds::derive(derive_seed(seed, SeedStream::block_noise, 0),
                               derive_seed(seed, SeedStream::routing, 0), branches);
  return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const char* base = std::getenv("KVPO_TEST_TMP");
  auto dir = std::filesystem::path(base ? base : std::filesystem::temp_directory_path().string()) /
             ("kvpo_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace kvpo::testing
