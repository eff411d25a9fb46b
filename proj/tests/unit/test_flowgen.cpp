// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "kvpo/error.hpp"
#include "kvpo/flowgen.hpp"
#include "support.hpp"

using namespace kvpo;

TEST_CASE("interpolate endpoints and midpoint") {
  const std::vector<double> x0{2.0, 0.0}, xT{0.0, 2.0};
  CHECK(interpolate(x0, xT, 0.0) == xT);
  CHECK(interpolate(x0, xT, 1.0) == x0);
  CHECK(interpolate(x0, xT, 0.5) == std::vector<double>{1.0, 1.0});
  CHECK_THROWS_AS(interpolate(x0, xT, 1.5), DomainError);
  CHECK_THROWS_AS(interpolate(x0, xT, -0.1), DomainError);
}

TEST_CASE("true velocity is the clean-minus-noise difference") {
  const std::vector<double> a{1.0, 1.0}, z{0.0, 0.0};
  CHECK(true_velocity(a, z) == std::vector<double>{1.0, 1.0});
  CHECK(true_velocity(a, a) == std::vector<double>{0.0, 0.0});
  const auto x0 = gaussian_noise(1, 16), xT = gaussian_noise(2, 16);
  const auto u = true_velocity(x0, xT);
  for (std::size_t i = 0; i < 16; ++i) CHECK(u[i] == x0[i] - xT[i]);
}

TEST_CASE("attention over a single pair returns its value") {
  KVCache cache = KVCache::empty(3, 9);
  const std::vector<KVEntry> cur{{{0.3, -1.0}, {5.0, 7.0}, 1}};
  CHECK(attention(std::vector<double>{1.0, 2.0}, cache, cur) == std::vector<double>{5.0, 7.0});
}

TEST_CASE("attention over identical entries returns the shared value") {
  KVCache cache = KVCache::empty(3, 9);
  cache.sink.push_back({{0.5, 0.5}, {2.0, -3.0}, 1});
  cache.frames_seen = 1;
  const std::vector<KVEntry> cur{{{0.5, 0.5}, {2.0, -3.0}, 2}};
  const auto out = attention(std::vector<double>{0.7, -0.2}, cache, cur);
  CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(-3.0).epsilon(1e-15));
}

TEST_CASE("attention matches a brute-force softmax oracle") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dk = 6;
    auto vec = [&] {
      std::vector<double> v(dk);
      for (auto& x : v) x = n(rng);
      return v;
    };
    KVCache cache = KVCache::empty(3, 9);
    for (int i = 0; i < 3; ++i) cache.sink.push_back({vec(), vec(), i + 1});
    cache.local[0] = KVEntry{vec(), vec(), 4};
    cache.frames_seen = 4;
    const std::vector<KVEntry> cur{{vec(), vec(), 5}};
    const auto q = vec();

    std::vector<const KVEntry*> all;
    for (const auto& e : cache.sink) all.push_back(&e);
    all.push_back(&*cache.local[0]);
    all.push_back(&cur[0]);
    std::vector<double> w;
    double z = 0.0;
    for (const auto* e : all) {
      double s = 0.0;
      for (std::size_t i = 0; i < dk; ++i) s += q[i] * e->key[i];
      w.push_back(std::exp(s / std::sqrt(static_cast<double>(dk))));
      z += w.back();
    }
    std::vector<double> oracle(dk, 0.0);
    for (std::size_t j = 0; j < all.size(); ++j) {
      for (std::size_t i = 0; i < dk; ++i) oracle[i] += w[j] / z * all[j]->value[i];
    }
    CHECK(testing::max_abs_diff(attention(q, cache, cur), oracle) < 1e-12);
  }
}

TEST_CASE("attention over nothing is a domain error") {
  CHECK_THROWS_AS(attention(std::vector<double>{1.0}, KVCache::empty(3, 9), {}), DomainError);
}

TEST_CASE("slot encoding is fixed and distinguishes slots") {
  CHECK(slot_encoding(4, 8) == slot_encoding(4, 8));
  CHECK(slot_encoding(4, 8) != slot_encoding(5, 8));
  CHECK(slot_encoding(0, 4)[1] == doctest::Approx(kSlotScale));
}

TEST_CASE("velocity is deterministic and vanishes with a zero head") {
  const Generator gen = testing::make_generator();
  Params p = testing::random_params(gen, 5);
  const Trajectory tr = gen.rollout(p, 4, 11);
  const KVCache cache = gen.default_cache(tr.history, 12);
  const auto x = gaussian_noise(3, gen.frame_values());
  const auto v1 = gen.net().velocity<double>(p.values, x, 0.25, gen.prompt(), cache);
  const auto v2 = gen.net().velocity<double>(p.values, x, 0.25, gen.prompt(), cache);
  CHECK(v1 == v2);
  for (auto& w : p.segment("head.out.weight")) w = 0.0;
  for (auto& b : p.segment("head.out.bias")) b = 0.0;
  for (double v : gen.net().velocity<double>(p.values, x, 0.25, gen.prompt(), cache)) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("perturbing one local entry changes the velocity") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 6);
  const Trajectory tr = gen.rollout(p, 4, 12);
  KVCache cache = gen.default_cache(tr.history, 12);
  const auto x = gaussian_noise(3, gen.frame_values());
  const auto before = gen.net().velocity<double>(p.values, x, 0.5, gen.prompt(), cache);
  cache.local[4]->value[0] += 0.5;
  const auto after = gen.net().velocity<double>(p.values, x, 0.5, gen.prompt(), cache);
  CHECK(before != after);
}

TEST_CASE("Euler steps") {
  FlowState s{{0.0, 0.0}, 0.0, 1};
  const FlowState a = ode_step(s, std::vector<double>{1.0, 1.0}, 0.25);
  CHECK(a.x == std::vector<double>{0.25, 0.25});
  CHECK(a.t == 0.25);
  CHECK(a.step_index == 2);
  CHECK(ode_step(s, std::vector<double>{0.0, 0.0}, 0.25).x == s.x);

  FlowState c{{1.0, -2.0}, 0.0, 1};
  const std::vector<double> v{0.5, 3.0};
  for (int i = 0; i < 4; ++i) c = ode_step(c, v, 0.25);
  CHECK(c.x[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(c.x[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(c.t == 1.0);
  CHECK_THROWS_AS(ode_step(c, v, 0.25), SequencingError);
  CHECK_THROWS_AS(ode_step(s, v, 0.0), DomainError);
}

TEST_CASE("time grid maps steps to 0, 0.25, 0.5, 0.75") {
  const TimeGrid g;
  CHECK(g.t(1) == 0.0);
  CHECK(g.t(2) == 0.25);
  CHECK(g.t(3) == 0.5);
  CHECK(g.t(4) == 0.75);
  CHECK(g.dt() == 0.25);
}

TEST_CASE("generate_block is deterministic and records one tuple per step") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 1);
  const KVCache cache = gen.empty_cache();
  const BlockResult a = gen.generate_block(p, cache, 42, 1, true);
  const BlockResult b = gen.generate_block(p, cache, 42, 1, true);
  CHECK(a.block == b.block);
  CHECK(a.replay == b.replay);
  REQUIRE(a.replay.size() == 4);
  for (int s = 0; s < 4; ++s) {
    CHECK(a.replay[s].step == s + 1);
    CHECK(a.replay[s].t == 0.25 * s);
    CHECK(a.replay[s].block == 1);
  }
  CHECK(a.replay[0].z == gaussian_noise(42, gen.frame_values()));
  CHECK(gen.generate_block(p, cache, 43, 1, false).block != a.block);
  CHECK(a.block.frames.size() == 3);
  CHECK(a.block.frames[0].frame_index == 1);
  CHECK(a.block.frames[2].frame_index == 3);
}

TEST_CASE("constant velocity field lands at noise plus velocity") {
  const Generator gen = testing::make_generator();
  Params p = testing::random_params(gen, 1);
  for (auto& w : p.segment("head.out.weight")) w = 0.0;
  const auto bias = std::vector<double>(p.segment("head.out.bias").begin(),
                                        p.segment("head.out.bias").end());
  const BlockResult r = gen.generate_block(p, gen.empty_cache(), 9, 1, false);
  const auto xT = gaussian_noise(9, gen.frame_values());
  const std::size_t d = gen.config().shape.latent_dim;
  for (std::size_t f = 0; f < 3; ++f) {
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(r.block.frames[f].values[i] == doctest::Approx(xT[f * d + i] + bias[i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("generate_block rejects a cache from the wrong position") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 1);
  CHECK_THROWS_AS(gen.generate_block(p, gen.empty_cache(), 1, 2, false), ContractError);
}

TEST_CASE("write-back layout after 3, 12 and 15 frames") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 2);
  KVCache cache = gen.empty_cache();
  FrameHistory history;
  std::vector<KVCache> after;
  for (int b = 1; b <= 5; ++b) {
    const BlockResult r = gen.generate_block(p, cache, 100 + b, b, false);
    cache = gen.write_back(cache, r.block, p);
    gen.append_history(history, r.block, p);
    after.push_back(cache);
  }
  // 3 frames: sink full, local empty.
  CHECK(after[0].sink.size() == 3);
  CHECK(after[0].occupied_local() == 0);
  for (int i = 0; i < 3; ++i) CHECK(after[0].sink[i].frame_index == i + 1);
  // 12 frames: local holds 4..12.
  CHECK(after[3].local_frame_indices() == std::vector<int>{4, 5, 6, 7, 8, 9, 10, 11, 12});
  // 15 frames: local holds 7..15, sink unchanged, evicted frames still in history.
  CHECK(after[4].local_frame_indices() == std::vector<int>{7, 8, 9, 10, 11, 12, 13, 14, 15});
  CHECK(after[4].sink == after[0].sink);
  CHECK(history.size() == 15);
  CHECK(history.entry(4).frame_index == 4);
  CHECK(history.entry(4) == after[3].local[0].value());
  CHECK_THROWS_AS(history.entry(16), ContractError);
  // Rebuilding the default layout from history matches incremental write-back.
  CHECK(gen.default_cache(history, 15) == after[4]);
}

TEST_CASE("default layout holds the most recent nine frames at every length") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 3);
  const Trajectory tr = gen.rollout(p, 8, 5);
  for (int L = 12; L <= 24; L += 3) {
    const KVCache c = gen.default_cache(tr.history, L);
    std::vector<int> expect;
    for (int i = L - 8; i <= L; ++i) expect.push_back(i);
    CHECK(c.local_frame_indices() == expect);
    CHECK(c.sink[0].frame_index == 1);
    CHECK(c.sink[2].frame_index == 3);
  }
}

TEST_CASE("write-back refuses a routed cache") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 2);
  KVCache c = gen.empty_cache();
  c.layout = LayoutTag::routed;
  const BlockResult r = gen.generate_block(p, gen.empty_cache(), 1, 1, false);
  CHECK_THROWS_AS(gen.write_back(c, r.block, p), ContractError);
}

TEST_CASE("rollout sizes and determinism") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const Trajectory one = gen.rollout(p, 1, 3);
  CHECK(one.blocks.size() == 1);
  CHECK(one.history.size() == 3);
  const Trajectory ten = gen.rollout(p, 10, 3, true);
  CHECK(ten.blocks.size() == 10);
  CHECK(ten.history.size() == 30);
  CHECK(ten.history.kv.size() == 30);
  CHECK(ten.replay.size() == 40);
  const Trajectory again = gen.rollout(p, 10, 3, true);
  CHECK(again.blocks == ten.blocks);
  CHECK(again.history == ten.history);
  CHECK(ten.blocks[0] == one.blocks[0]);
  CHECK(gen.rollout(p, 10, 4).blocks != ten.blocks);
}

TEST_CASE("rollout block b uses the derived per-block noise") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const Trajectory tr = gen.rollout(p, 2, 77, true);
  CHECK(tr.replay[4].z == gaussian_noise(derive_seed(77, SeedStream::block_noise, 2),
                                          gen.frame_values()));
}

TEST_CASE("rekey under the rollout parameters reproduces the history") {
  const Generator gen = testing::make_generator();
  const Params p = testing::random_params(gen, 4);
  const Trajectory tr = gen.rollout(p, 5, 9);
  CHECK(gen.rekey(tr.history, p, 15) == tr.history);
  const Params q = testing::random_params(gen, 5);
  CHECK(gen.rekey(tr.history, q, 15).kv != tr.history.kv);
  CHECK(gen.rekey(tr.history, q, 15).frames == tr.history.frames);
}

TEST_CASE("prompt dimension is checked") {
  CHECK_THROWS_AS(Generator(GeneratorConfig{}, std::vector<double>(3)), ConfigError);
}
