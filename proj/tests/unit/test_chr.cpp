// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <map>

#include "kvpo/chr.hpp"
#include "kvpo/error.hpp"
#include "kvpo/policy.hpp"
#include "support.hpp"

using namespace kvpo;

namespace {

std::vector<int> range(int lo, int hi) {
  std::vector<int> v;
  for (int i = lo; i <= hi; ++i) v.push_back(i);
  return v;
}

RoutingDecision identity_routing(int frames) {
  return RoutingDecision{range(frames - 8, frames - 3), 1, 0};
}

}  // namespace

TEST_CASE("routable set bounds") {
  CHECK(routable_set(12) == range(4, 9));
  CHECK(routable_set(15) == range(4, 12));
  CHECK(routable_set(15).size() == 9);
  CHECK_THROWS_AS(routable_set(11), InsufficientHistoryError);
}

TEST_CASE("a six-element pool yields a permutation") {
  const auto omega = routable_set(12);
  const RoutingDecision d = sample_routing(omega, 3);
  auto sorted = d.indices;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == omega);
  CHECK(sample_routing(omega, 3) == d);
  CHECK_THROWS_AS(sample_routing(range(4, 8), 1), InsufficientHistoryError);
}

TEST_CASE("routing marginals are uniform without replacement") {
  const auto omega = routable_set(15);
  std::map<int, int> hits;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto d = sample_routing(omega, derive_seed(99, SeedStream::routing, i));
    auto s = d.indices;
    std::sort(s.begin(), s.end());
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    for (int r : d.indices) ++hits[r];
  }
  for (int r : omega) {
    CHECK(std::abs(hits[r] / static_cast<double>(draws) - 6.0 / 9.0) < 0.02);
  }
}

TEST_CASE("routed cache layout follows the decision order") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 3);
  const Trajectory tr = gen.rollout(p, 5, 1);
  const RoutingDecision d{{4, 7, 5, 9, 8, 6}, 1, 5};
  const KVCache c = build_branch_cache(gen, tr.history, 12, d);
  CHECK(c.layout == LayoutTag::routed);
  CHECK(c.local_frame_indices() == std::vector<int>{4, 7, 5, 9, 8, 6, 10, 11, 12});
  for (int i = 0; i < 3; ++i) CHECK(c.sink[i] == tr.history.entry(i + 1));
  CHECK(*c.local[1] == tr.history.entry(7));
}

TEST_CASE("near slots always hold the newest frames") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 3);
  const Trajectory tr = gen.rollout(p, 7, 1);
  for (int L : {12, 15, 18}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const KVCache c = build_branch_cache(gen, tr.history, L, sample_routing(routable_set(L), s));
      const auto idx = c.local_frame_indices();
      CHECK(std::vector<int>(idx.end() - 3, idx.end()) == range(L - 2, L));
    }
  }
}

TEST_CASE("identity routing reproduces the default cache") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 3);
  const Trajectory tr = gen.rollout(p, 6, 1);
  for (int L : {12, 15}) {
    KVCache routed = build_branch_cache(gen, tr.history, L, identity_routing(L));
    const KVCache def = gen.default_cache(tr.history, L);
    CHECK(routed.entries().size() == def.entries().size());
    for (std::size_t i = 0; i < def.entries().size(); ++i) {
      CHECK(*routed.entries()[i] == *def.entries()[i]);
    }
    routed.layout = LayoutTag::default_layout;
    CHECK(routed == def);
  }
}

TEST_CASE("invalid routings are contract errors") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 3);
  const Trajectory tr = gen.rollout(p, 5, 1);
  CHECK_THROWS_AS(build_branch_cache(gen, tr.history, 12, {{3, 4, 5, 6, 7, 8}, 1, 5}),
                  ContractError);
  CHECK_THROWS_AS(build_branch_cache(gen, tr.history, 12, {{4, 4, 5, 6, 7, 8}, 1, 5}),
                  ContractError);
  CHECK_THROWS_AS(build_branch_cache(gen, tr.history, 15, {{4, 5, 6, 7, 8, 13}, 1, 5}),
                  ContractError);
}

TEST_CASE("minimum pivot under the default geometry is 5") {
  CHECK(min_pivot(GeneratorConfig{}, 6) == 5);
  CHECK(min_pivot(GeneratorConfig{}, 9) == 5);
}

TEST_CASE("group structure: shared prefix, tuple counts, anchor equals rollout") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  GroupSpec spec = testing::group_spec(5, 5, 8, 21);
  spec.num_blocks = 10;
  const RolloutGroup g = rollout_group(gen, p, spec);
  REQUIRE(g.branches.size() == 8);
  for (const auto& br : g.branches) {
    CHECK(br.replay.size() == 20);
    CHECK(br.blocks.size() == 10);
    for (int b = 0; b < 4; ++b) CHECK(br.blocks[b] == g.anchor.blocks[b]);
    REQUIRE(br.routing.has_value());
    for (int r : br.routing->indices) CHECK((r >= 4 && r <= 9));
    CHECK(br.replay.front().block == 5);
    CHECK(br.replay.back().block == 9);
  }
  CHECK_FALSE(g.anchor.routing.has_value());
  const Trajectory plain = gen.rollout(p, 10, spec.seeds.noise_master);
  CHECK(g.anchor.blocks == plain.blocks);
  CHECK(g.anchor.history == plain.history);
}

TEST_CASE("groups are reproducible and thread-count independent") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const GroupSpec spec = testing::group_spec(5, 3, 4, 8);
  const RolloutGroup a = rollout_group(gen, p, spec, 1);
  const RolloutGroup b = rollout_group(gen, p, spec, 3);
  CHECK(a.anchor.blocks == b.anchor.blocks);
  for (std::size_t i = 0; i < a.branches.size(); ++i) {
    CHECK(a.branches[i].blocks == b.branches[i].blocks);
    CHECK(a.branches[i].replay == b.branches[i].replay);
  }
}

TEST_CASE("branches with identical routing seeds are identical") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  GroupSpec spec = testing::group_spec(5, 3, 3, 8);
  spec.seeds.routing.assign(3, 1234);
  const RolloutGroup g = rollout_group(gen, p, spec);
  CHECK(g.branches[0].blocks == g.branches[1].blocks);
  CHECK(g.branches[1].blocks == g.branches[2].blocks);
}

TEST_CASE("distinct routings diverge inside the window") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const RolloutGroup g = rollout_group(gen, p, testing::group_spec(6, 2, 4, 19));
  for (std::size_t i = 1; i < g.branches.size(); ++i) {
    if (g.branches[i].routing != g.branches[0].routing) {
      CHECK(g.branches[i].blocks[5] != g.branches[0].blocks[5]);
    }
  }
}

TEST_CASE("identity-routed branch equals the anchor over the window") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const RolloutGroup g = rollout_group(gen, p, testing::group_spec(5, 3, 2, 5));
  std::vector<RoutingDecision> ids;
  for (int b = 5; b < 8; ++b) ids.push_back(identity_routing(3 * (b - 1)));
  const BranchTrajectory br = explicit_branch(gen, p, g, ids);
  CHECK(br.blocks == g.anchor.blocks);
  CHECK(br.history == g.anchor.history);
}

TEST_CASE("per-block routing redraws within the window") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  GroupSpec spec = testing::group_spec(5, 3, 2, 5);
  spec.routing_mode = RoutingMode::per_block;
  const RolloutGroup g = rollout_group(gen, p, spec);
  for (const auto& br : g.branches) {
    REQUIRE(br.block_routings.size() == 3);
    CHECK(br.block_routings[0] == *br.routing);
    CHECK(br.block_routings[1] != br.block_routings[0]);
  }
  spec.routing_mode = RoutingMode::fixed;
  for (const auto& br : rollout_group(gen, p, spec).branches) {
    for (const auto& d : br.block_routings) CHECK(d == *br.routing);
  }
}

TEST_CASE("group preconditions are configuration errors") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  CHECK_THROWS_AS(rollout_group(gen, p, testing::group_spec(4, 2, 2, 1)), ConfigError);
  GroupSpec over = testing::group_spec(5, 3, 2, 1);
  over.num_blocks = 6;
  CHECK_THROWS_AS(rollout_group(gen, p, over), ConfigError);
  GroupSpec seeds = testing::group_spec(5, 2, 2, 1);
  seeds.seeds.routing.pop_back();
  CHECK_THROWS_AS(rollout_group(gen, p, seeds), ConfigError);
}

TEST_CASE("replaying the anchor reproduces its velocities exactly") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  GroupSpec spec = testing::group_spec(5, 4, 3, 2);
  spec.num_blocks = 8;
  RolloutGroup g = rollout_group(gen, p, spec);
  const auto ctx = replay_contexts(gen, p, g, g.anchor);
  const auto v = replay_velocities(gen, p, g.anchor, ctx);
  REQUIRE(v.size() == g.anchor.replay.size());
  REQUIRE(v.size() == 16);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == g.anchor.replay[i].u_hat);
  const TveOptions opts;
  CHECK(tve<double>(gen, p.values, g.anchor, ctx, opts) == 0.0);
}

TEST_CASE("branch replay uses W*S evaluations and is deterministic") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const RolloutGroup g = rollout_group(gen, p, testing::group_spec(5, 3, 3, 2));
  const auto a = replay_energies(gen, p, g);
  const auto b = replay_energies(gen, p, g, ReplayContextMode::own_history, 2);
  CHECK(a == b);
  for (const auto& per_branch : a) CHECK(per_branch.size() == 12);
  // The first window block replays under the shared prefix, so replay
  // differs from the routed rollout velocity.
  CHECK(a[0][0] != g.branches[0].replay[0].u_hat);
}

TEST_CASE("replay contexts come from the selected history") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const RolloutGroup g = rollout_group(gen, p, testing::group_spec(5, 3, 2, 2));
  const auto& br = g.branches[0];
  const auto own = replay_contexts(gen, p, g, br, ReplayContextMode::own_history);
  const auto anchor = replay_contexts(gen, p, g, br, ReplayContextMode::anchor_history);
  REQUIRE(own.size() == 3);
  CHECK(own[0] == anchor[0]);  // identical shared prefix
  CHECK(own[1] == gen.default_cache(br.history, 15));
  CHECK(anchor[1] == gen.default_cache(g.anchor.history, 15));
  CHECK(own[1] != anchor[1]);
}
