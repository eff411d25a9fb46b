// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Hot paths of one iteration at the default geometry: the velocity forward
// pass, one branch TVE gradient, group exploration and a full iteration.

#include <benchmark/benchmark.h>

#include "kvpo/chr.hpp"
#include "kvpo/policy.hpp"
#include "kvpo/trainer.hpp"

namespace {

using namespace kvpo;

struct Fixture {
  Generator gen;
  Params params;
  RolloutGroup group;

  Fixture()
      : gen(GeneratorConfig{}, gaussian_noise(7, GeneratorConfig{}.shape.prompt_dim)),
        params(param_init(gen.net().network_spec(), 1)) {
    GroupSpec spec;
    spec.pivot = 5;
    spec.window = 4;
    spec.num_blocks = 8;
    spec.branches = 8;
    spec.seeds = GroupSeeds::derive(11, 12, spec.branches);
    group = rollout_group(gen, params, spec);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_VelocityForward(benchmark::State& state) {
  const auto& f = fixture();
  const KVCache cache = f.gen.default_cache(f.group.anchor.history, 12);
  const auto x = gaussian_noise(3, f.gen.frame_values());
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        f.gen.net().velocity<double>(f.params.values, x, 0.5, f.gen.prompt(), cache));
  }
}
BENCHMARK(BM_VelocityForward);

void BM_TveGradient(benchmark::State& state) {
  const auto& f = fixture();
  const ReplayContexts ctx =
      build_replay_contexts(f.gen, f.params, f.group, ReplayContextMode::own_history);
  const TveOptions opts{static_cast<int>(state.range(0)), EnergyValueMode::all_steps};
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad(f.params, [&](std::span<const ad::Var> th) {
      return tve<ad::Var>(f.gen, th, f.group.branches[0], ctx.branches[0], opts);
    }));
  }
}
BENCHMARK(BM_TveGradient)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

void BM_RolloutGroup(benchmark::State& state) {
  const auto& f = fixture();
  GroupSpec spec;
  spec.pivot = 5;
  spec.window = 4;
  spec.num_blocks = 8;
  spec.branches = static_cast<int>(state.range(0));
  spec.seeds = GroupSeeds::derive(11, 12, spec.branches);
  for (auto _ : state) benchmark::DoNotOptimize(rollout_group(f.gen, f.params, spec));
}
BENCHMARK(BM_RolloutGroup)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_TrainIteration(benchmark::State& state) {
  RunConfig c;
  validate(c);
  Trainer t(c.trainer);
  for (auto _ : state) benchmark::DoNotOptimize(t.train_iteration());
}
BENCHMARK(BM_TrainIteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
