// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "kvpo/error.hpp"

namespace kvpo {

double reward_target(FrameSpan frames, std::span<const double> target) {
  if (frames.empty()) throw ContractError("reward_target over no frames");
  double sq = 0.0;
  std::size_t n = 0;
  for (const Latent* f : frames) {
    if (f->values.size() != target.size()) throw ContractError("reward target dimension mismatch");
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double diff = f->values[i] - target[i];
      sq += diff * diff;
    }
    n += target.size();
  }
  return -sq / static_cast<double>(n);
}

double reward_target(const BranchTrajectory& traj, std::span<const double> target) {
  const auto frames = traj.window_frames();
  return reward_target(frames, target);
}

double reward_smoothness(FrameSpan frames) {
  if (frames.size() < 2) throw ContractError("reward_smoothness needs at least two frames");
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const auto& a = frames[k]->values;
    const auto& b = frames[k + 1]->values;
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (b[i] - a[i]) * (b[i] - a[i]);
    total += sq / static_cast<double>(a.size());
  }
  return -total / static_cast<double>(frames.size() - 1);
}

double reward_smoothness(const BranchTrajectory& traj) {
  const auto frames = traj.window_frames();
  return reward_smoothness(frames);
}

const std::vector<std::string>& registered_rewards() {
  static const std::vector<std::string> names{"target", "smoothness"};
  return names;
}

void validate(const RewardSpec& spec) {
  if (spec.components.empty()) throw ConfigError("reward spec has no components");
  if (spec.segment_count < 1) throw ConfigError("reward_segments must be >= 1");
  const auto& names = registered_rewards();
  for (const auto& c : spec.components) {
    if (std::find(names.begin(), names.end(), c.name) == names.end()) {
      throw ConfigError("unknown reward component '" + c.name + "'");
    }
    if (!std::isfinite(c.weight)) {
      throw ConfigError("reward component '" + c.name + "' has a non-finite weight");
    }
  }
}

double composite(FrameSpan frames, const RewardSpec& spec) {
  validate(spec);
  const auto segments = static_cast<std::size_t>(spec.segment_count);
  const bool needs_pairs = std::any_of(spec.components.begin(), spec.components.end(),
                                       [](const auto& c) { return c.name == "smoothness"; });
  const std::size_t min_len = needs_pairs ? 2 : 1;
  if (frames.size() < segments * min_len) {
    throw ConfigError(std::to_string(segments) + " reward segments do not fit in " +
                      std::to_string(frames.size()) + " frames");
  }

  double total = 0.0;
  std::size_t begin = 0;
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t len = frames.size() / segments + (s < frames.size() % segments ? 1 : 0);
    const FrameSpan seg = frames.subspan(begin, len);
    begin += len;
    double score = 0.0;
    for (const auto& c : spec.components) {
      const double r = c.name == "target" ? reward_target(seg, spec.target)
                                          : reward_smoothness(seg);
      score += c.weight * r;
    }
    total += score;
  }
  return total / static_cast<double>(segments);
}

double composite(const BranchTrajectory& traj, const RewardSpec& spec) {
  const auto frames = traj.window_frames();
  return composite(frames, spec);
}

}  // namespace kvpo
