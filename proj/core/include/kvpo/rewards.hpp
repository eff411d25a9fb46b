// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic deterministic rewards over a trajectory's window frames. The
// trajectory -> real interface is the seam where external scorers plug in.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "kvpo/chr.hpp"

namespace kvpo {

using FrameSpan = std::span<const Latent* const>;

/// -mean over frames and dimensions of (x - target)^2. Maximum 0.
double reward_target(FrameSpan frames, std::span<const double> target);
double reward_target(const BranchTrajectory& traj, std::span<const double> target);

/// -mean over consecutive pairs of ||x_{i+1} - x_i||^2 / d. Maximum 0.
double reward_smoothness(FrameSpan frames);
double reward_smoothness(const BranchTrajectory& traj);

struct RewardComponent {
  std::string name;  // "target" or "smoothness"
  double weight = 1.0;

  bool operator==(const RewardComponent&) const = default;
};

struct RewardSpec {
  std::vector<RewardComponent> components{{"target", 0.7}, {"smoothness", 0.3}};
  int segment_count = 1;
  std::vector<double> target;

  bool operator==(const RewardSpec&) const = default;
};

const std::vector<std::string>& registered_rewards();

/// Throws ConfigError on unknown names, non-finite weights or a
/// non-positive segment count.
void validate(const RewardSpec& spec);

/// Splits the frames into segment_count contiguous segments (sizes differ
/// by at most one), scores each with the weighted component sum and
/// averages the segment scores.
double composite(FrameSpan frames, const RewardSpec& spec);
double composite(const BranchTrajectory& traj, const RewardSpec& spec);

}  // namespace kvpo
