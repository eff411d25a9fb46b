// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Causal history routing: exploration branches that differ only in which
// past frames occupy the routed part of the local key/value window.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kvpo/flowgen.hpp"

namespace kvpo {

struct RoutingDecision {
  std::vector<int> indices;
  int branch_id = 0;
  int pivot_block = 0;

  bool operator==(const RoutingDecision&) const = default;
};

enum class RoutingMode {
  fixed,      // one decision per branch, drawn at the pivot
  per_block,  // redrawn for every block of the window
};

enum class ReplayContextMode {
  own_history,     // rebuild the default cache from the branch's own frames
  anchor_history,  // rebuild it from the anchor's frames
};

struct BranchTrajectory {
  int branch_id = 0;  // 0 is the anchor
  std::vector<Block> blocks;
  FrameHistory history;
  std::optional<RoutingDecision> routing;
  std::vector<RoutingDecision> block_routings;  // one per window block
  std::vector<ReplayTuple> replay;
  double reward = 0.0;
  int pivot = 1;
  int window = 0;

  /// Final latents of every frame in blocks [pivot, pivot + window).
  std::vector<const Latent*> window_frames() const;
};

struct GroupSeeds {
  std::uint64_t noise_master = 0;
  std::vector<std::uint64_t> routing;  // one per branch

  /// routing[g] = derive_seed(routing_master, routing, g + 1).
  static GroupSeeds derive(std::uint64_t noise_master, std::uint64_t routing_master,
                           int branches);
};

struct GroupSpec {
  int num_blocks = 8;
  int pivot = 5;
  int window = 5;
  int branches = 8;
  std::size_t routed_slots = 6;
  RoutingMode routing_mode = RoutingMode::fixed;
  GroupSeeds seeds;
};

struct RolloutGroup {
  BranchTrajectory anchor;
  std::vector<BranchTrajectory> branches;
  GroupSeeds seeds;
  int pivot = 0;
  int window = 0;
  std::size_t routed_slots = 6;
};

/// Ω_L = {sink + 1, ..., L - near}. Throws InsufficientHistoryError when it
/// has fewer than `routed` members.
std::vector<int> routable_set(int frames, std::size_t routed = 6, std::size_t near = 3,
                              std::size_t sink = 3);

/// `count` distinct indices drawn uniformly without replacement (partial
/// Fisher-Yates on an mt19937_64 stream), in draw order.
RoutingDecision sample_routing(std::span<const int> omega, std::uint64_t seed,
                               std::size_t count = 6, int branch_id = 0, int pivot_block = 0);

/// Routed-layout cache for a block following `frames` frames: sink
/// unchanged, routed entries in decision order, then the most recent
/// `local_capacity - routed` frames.
KVCache build_branch_cache(const Generator& gen, const FrameHistory& history, int frames,
                           const RoutingDecision& routing);

/// Smallest pivot block whose preceding history can fill the routed slots.
int min_pivot(const GeneratorConfig& config, std::size_t routed_slots);

/// Anchor plus routed branches sharing the prefix before the pivot and the
/// per-block noise of every block.
RolloutGroup rollout_group(const Generator& gen, const Params& params, const GroupSpec& spec,
                           int threads = 1);

/// A branch continuing the group's shared prefix under explicit routing
/// decisions, one per window block, with the group's noise. Used to probe
/// specific layouts such as identity routing.
BranchTrajectory explicit_branch(const Generator& gen, const Params& params,
                                 const RolloutGroup& group,
                                 std::span<const RoutingDecision> decisions, int branch_id = 1);

/// Default-layout contexts K_{<b} for each window block of `branch`, with
/// key/value entries recomputed under `params`.
std::vector<KVCache> replay_contexts(const Generator& gen, const Params& params,
                                     const RolloutGroup& group, const BranchTrajectory& branch,
                                     ReplayContextMode mode = ReplayContextMode::own_history);

/// One forward pass per replay tuple; result[i] is the replayed velocity of
/// branch.replay[i].
std::vector<std::vector<double>> replay_velocities(const Generator& gen, const Params& params,
                                                   const BranchTrajectory& branch,
                                                   std::span<const KVCache> contexts);

/// replay_velocities for every branch of the group.
std::vector<std::vector<std::vector<double>>> replay_energies(
    const Generator& gen, const Params& params, const RolloutGroup& group,
    ReplayContextMode mode = ReplayContextMode::own_history, int threads = 1);

}  // namespace kvpo
