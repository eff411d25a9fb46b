// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/chr.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "kvpo/error.hpp"
#include "kvpo/parallel.hpp"
#include "kvpo/seeds.hpp"

namespace kvpo {

std::vector<const Latent*> BranchTrajectory::window_frames() const {
  std::vector<const Latent*> out;
  for (const auto& b : blocks) {
    if (b.block_index >= pivot && b.block_index < pivot + window) {
      for (const auto& f : b.frames) out.push_back(&f);
    }
  }
  return out;
}

GroupSeeds GroupSeeds::derive(std::uint64_t noise_master, std::uint64_t routing_master,
                              int branches) {
  GroupSeeds s;
  s.noise_master = noise_master;
  for (int g = 1; g <= branches; ++g) {
    s.routing.push_back(
        derive_seed(routing_master, SeedStream::routing, static_cast<std::uint64_t>(g)));
  }
  return s;
}

std::vector<int> routable_set(int frames, std::size_t routed, std::size_t near,
                              std::size_t sink) {
  const int lo = static_cast<int>(sink) + 1;
  const int hi = frames - static_cast<int>(near);
  const int size = std::max(0, hi - lo + 1);
  if (static_cast<std::size_t>(size) < routed) {
    throw InsufficientHistoryError("history of " + std::to_string(frames) + " frames gives " +
                                   std::to_string(size) + " routable frames, need " +
                                   std::to_string(routed));
  }
  std::vector<int> omega(static_cast<std::size_t>(size));
  std::iota(omega.begin(), omega.end(), lo);
  return omega;
}

RoutingDecision sample_routing(std::span<const int> omega, std::uint64_t seed,
                               std::size_t count, int branch_id, int pivot_block) {
  if (omega.size() < count) {
    throw InsufficientHistoryError("routable set has " + std::to_string(omega.size()) +
                                   " frames, need " + std::to_string(count));
  }
  std::vector<int> pool(omega.begin(), omega.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return RoutingDecision{std::move(pool), branch_id, pivot_block};
}

KVCache build_branch_cache(const Generator& gen, const FrameHistory& history, int frames,
                           const RoutingDecision& routing) {
  const auto& cfg = gen.config();
  if (routing.indices.size() > cfg.local_size) {
    throw ContractError("more routed frames than local slots");
  }
  const std::size_t near = cfg.local_size - routing.indices.size();
  const std::vector<int> omega =
      routable_set(frames, routing.indices.size(), near, cfg.sink_size);
  for (std::size_t i = 0; i < routing.indices.size(); ++i) {
    const int r = routing.indices[i];
    if (r < omega.front() || r > omega.back()) {
      throw ContractError("routed frame " + std::to_string(r) + " outside routable set");
    }
    if (std::count(routing.indices.begin(), routing.indices.end(), r) != 1) {
      throw ContractError("routed frame " + std::to_string(r) + " repeated");
    }
  }
  if (frames > static_cast<int>(history.kv.size())) {
    throw ContractError("history shorter than routed cache length");
  }

  KVCache c = gen.empty_cache();
  c.layout = LayoutTag::routed;
  c.frames_seen = frames;
  for (int i = 1; i <= static_cast<int>(c.sink_capacity); ++i) c.sink.push_back(history.entry(i));
  std::size_t slot = 0;
  for (int r : routing.indices) c.local[slot++] = history.entry(r);
  for (int f = frames - static_cast<int>(near) + 1; f <= frames; ++f) {
    c.local[slot++] = history.entry(f);
  }
  return c;
}

int min_pivot(const GeneratorConfig& config, std::size_t routed_slots) {
  if (routed_slots > config.local_size) throw ConfigError("routed_slots exceeds local_size");
  const std::size_t near = config.local_size - routed_slots;
  // Need frames - near - sink >= routed.
  const auto needed = static_cast<int>(config.sink_size + near + routed_slots);
  const int fpb = config.frames_per_block;
  return (needed + fpb - 1) / fpb + 1;
}

namespace {

BranchTrajectory continue_branch(const Generator& gen, const Params& params,
                                 const GroupSpec& spec, const std::vector<Block>& prefix,
                                 const FrameHistory& prefix_history, int branch_id,
                                 std::span<const RoutingDecision> forced = {}) {
  const int fpb = gen.config().frames_per_block;
  const bool routed = branch_id > 0;

  BranchTrajectory br;
  br.branch_id = branch_id;
  br.blocks = prefix;
  br.history = prefix_history;
  br.pivot = spec.pivot;
  br.window = spec.window;

  std::uint64_t routing_seed = 0;
  if (routed && !forced.empty()) {
    br.routing = forced.front();
  } else if (routed) {
    routing_seed = spec.seeds.routing.at(static_cast<std::size_t>(branch_id - 1));
    const std::size_t near = gen.config().local_size - spec.routed_slots;
    const auto omega = routable_set(fpb * (spec.pivot - 1), spec.routed_slots, near,
                                    gen.config().sink_size);
    br.routing = sample_routing(omega, routing_seed, spec.routed_slots, branch_id, spec.pivot);
  }

  for (int b = spec.pivot; b <= spec.num_blocks; ++b) {
    const int frames = fpb * (b - 1);
    const bool in_window = b < spec.pivot + spec.window;
    KVCache cache;
    if (routed && in_window) {
      RoutingDecision decision = *br.routing;
      if (!forced.empty()) {
        decision = forced[static_cast<std::size_t>(b - spec.pivot)];
      } else if (spec.routing_mode == RoutingMode::per_block && b > spec.pivot) {
        const std::size_t near = gen.config().local_size - spec.routed_slots;
        const auto omega =
            routable_set(frames, spec.routed_slots, near, gen.config().sink_size);
        decision = sample_routing(omega, derive_seed(routing_seed, SeedStream::routing,
                                                     static_cast<std::uint64_t>(b)),
                                  spec.routed_slots, branch_id, spec.pivot);
      }
      br.block_routings.push_back(decision);
      cache = build_branch_cache(gen, br.history, frames, decision);
    } else {
      cache = gen.default_cache(br.history, frames);
    }
    const auto seed = derive_seed(spec.seeds.noise_master, SeedStream::block_noise,
                                  static_cast<std::uint64_t>(b));
    BlockResult r = gen.generate_block(params, cache, seed, b, in_window);
    gen.append_history(br.history, r.block, params);
    br.replay.insert(br.replay.end(), r.replay.begin(), r.replay.end());
    br.blocks.push_back(std::move(r.block));
  }
  return br;
}

}  // namespace

RolloutGroup rollout_group(const Generator& gen, const Params& params, const GroupSpec& spec,
                           int threads) {
  const auto& cfg = gen.config();
  if (spec.branches < 1) throw ConfigError("branch_number must be >= 1");
  if (spec.window < 1) throw ConfigError("perturbed_blocks must be >= 1");
  if (spec.routed_slots < 1 || spec.routed_slots > cfg.local_size) {
    throw ConfigError("routed_slots must lie in [1, local_size]");
  }
  if (spec.pivot < min_pivot(cfg, spec.routed_slots)) {
    throw ConfigError("pivot block " + std::to_string(spec.pivot) +
                      " has too little history to route " + std::to_string(spec.routed_slots) +
                      " slots (minimum pivot " +
                      std::to_string(min_pivot(cfg, spec.routed_slots)) + ")");
  }
  if (spec.pivot + spec.window - 1 > spec.num_blocks) {
    throw ConfigError("perturbation window runs past the last block");
  }
  if (spec.seeds.routing.size() != static_cast<std::size_t>(spec.branches)) {
    throw ConfigError("need one routing seed per branch");
  }

  // Shared prefix: blocks before the pivot, generated once.
  std::vector<Block> prefix;
  FrameHistory prefix_history;
  KVCache cache = gen.empty_cache();
  for (int b = 1; b < spec.pivot; ++b) {
    const auto seed = derive_seed(spec.seeds.noise_master, SeedStream::block_noise,
                                  static_cast<std::uint64_t>(b));
    BlockResult r = gen.generate_block(params, cache, seed, b, false);
    cache = gen.write_back(cache, r.block, params);
    gen.append_history(prefix_history, r.block, params);
    prefix.push_back(std::move(r.block));
  }

  RolloutGroup group;
  group.seeds = spec.seeds;
  group.pivot = spec.pivot;
  group.window = spec.window;
  group.routed_slots = spec.routed_slots;
  group.branches.resize(static_cast<std::size_t>(spec.branches));
  parallel_for(static_cast<std::size_t>(spec.branches) + 1, threads, [&](std::size_t i) {
    BranchTrajectory br =
        continue_branch(gen, params, spec, prefix, prefix_history, static_cast<int>(i));
    if (i == 0) {
      group.anchor = std::move(br);
    } else {
      group.branches[i - 1] = std::move(br);
    }
  });
  return group;
}

BranchTrajectory explicit_branch(const Generator& gen, const Params& params,
                                 const RolloutGroup& group,
                                 std::span<const RoutingDecision> decisions, int branch_id) {
  if (decisions.size() != static_cast<std::size_t>(group.window)) {
    throw ContractError("need one routing decision per window block");
  }
  if (branch_id < 1) throw ContractError("explicit branches need a positive id");
  GroupSpec spec;
  spec.num_blocks = static_cast<int>(group.anchor.blocks.size());
  spec.pivot = group.pivot;
  spec.window = group.window;
  spec.routed_slots = decisions.front().indices.size();
  spec.seeds = group.seeds;
  const int fpb = gen.config().frames_per_block;
  const std::vector<Block> prefix(group.anchor.blocks.begin(),
                                  group.anchor.blocks.begin() + (group.pivot - 1));
  FrameHistory history;
  const auto n = static_cast<std::size_t>(fpb * (group.pivot - 1));
  history.frames.assign(group.anchor.history.frames.begin(),
                        group.anchor.history.frames.begin() + static_cast<std::ptrdiff_t>(n));
  history.kv.assign(group.anchor.history.kv.begin(),
                    group.anchor.history.kv.begin() + static_cast<std::ptrdiff_t>(n));
  return continue_branch(gen, params, spec, prefix, history, branch_id, decisions);
}

std::vector<KVCache> replay_contexts(const Generator& gen, const Params& params,
                                     const RolloutGroup& group, const BranchTrajectory& branch,
                                     ReplayContextMode mode) {
  const BranchTrajectory& source =
      mode == ReplayContextMode::own_history ? branch : group.anchor;
  const int fpb = gen.config().frames_per_block;
  const int last = branch.pivot + branch.window - 1;
  const FrameHistory keyed = gen.rekey(source.history, params, fpb * (last - 1));
  std::vector<KVCache> out;
  for (int b = branch.pivot; b <= last; ++b) out.push_back(gen.default_cache(keyed, fpb * (b - 1)));
  return out;
}

std::vector<std::vector<double>> replay_velocities(const Generator& gen, const Params& params,
                                                   const BranchTrajectory& branch,
                                                   std::span<const KVCache> contexts) {
  std::vector<std::vector<double>> out;
  out.reserve(branch.replay.size());
  for (const auto& tup : branch.replay) {
    const auto idx = static_cast<std::size_t>(tup.block - branch.pivot);
    if (idx >= contexts.size()) throw ContractError("replay tuple outside context window");
    out.push_back(gen.net().velocity<double>(params.values, tup.z, tup.t, gen.prompt(),
                                             contexts[idx]));
  }
  return out;
}

std::vector<std::vector<std::vector<double>>> replay_energies(const Generator& gen,
                                                              const Params& params,
                                                              const RolloutGroup& group,
                                                              ReplayContextMode mode,
                                                              int threads) {
  std::vector<std::vector<std::vector<double>>> out(group.branches.size());
  parallel_for(group.branches.size(), threads, [&](std::size_t g) {
    const auto& br = group.branches[g];
    const auto ctx = replay_contexts(gen, params, group, br, mode);
    out[g] = replay_velocities(gen, params, br, ctx);
  });
  return out;
}

}  // namespace kvpo
