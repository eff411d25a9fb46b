// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include "kvpo/config.hpp"
#include "kvpo/error.hpp"
#include "support.hpp"

using namespace kvpo;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool mentions(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("defaults validate and fill the reward target") {
  RunConfig c;
  validate(c);
  CHECK(c.trainer.reward.target == std::vector<double>(8, 0.5));
  CHECK(c.trainer.branch_number == 8);
  CHECK(c.trainer.perturbed_blocks == 5);
  CHECK(c.trainer.kl_weight == 5.0);
}

TEST_CASE("JSON round trip preserves every field") {
  RunConfig c;
  c.trainer.seed = 42;
  c.trainer.kl_weight = 1.5;
  c.trainer.surrogate = SurrogateKind::l2;
  c.trainer.routing_mode = RoutingMode::per_block;
  c.trainer.local_window = LocalWindowMode::random;
  c.trainer.reward.components = {{"smoothness", 2.0}};
  c.out_dir = "somewhere";
  validate(c);
  const RunConfig back = parse_config(to_json(c));
  CHECK(back == c);
  CHECK(parse_config(to_json(back, -1)) == c);
}

TEST_CASE("every key is emitted") {
  const auto j = to_json(RunConfig{});
  for (const auto& k : config_keys()) CHECK(mentions(j, "\"" + k + "\""));
  CHECK(config_keys().size() > 30);
}

TEST_CASE("unknown keys and malformed values are rejected") {
  CHECK(mentions(message_of([] { parse_config(R"({"branch_numbr": 4})"); }), "branch_numbr"));
  CHECK(mentions(message_of([] { parse_config(R"({"branch_number": "four"})"); }),
                 "branch_number"));
  CHECK(mentions(message_of([] { parse_config(R"({"surrogate": "l3"})"); }), "tve, l2"));
  CHECK(mentions(message_of([] { parse_config("[1, 2]"); }), "object"));
  CHECK(mentions(message_of([] { parse_config("{"); }), "JSON"));
}

TEST_CASE("validation names the offending key") {
  const std::vector<std::pair<std::string, std::string>> bad{
      {R"({"temperature": 0})", "temperature"},
      {R"({"clip_range_high": 1.5})", "clip_range_high"},
      {R"({"kl_penalty_weight": -1})", "kl_penalty_weight"},
      {R"({"branch_number": 1})", "branch_number"},
      {R"({"gradient_carrying_replay_steps": 5})", "gradient_carrying_replay_steps"},
      {R"({"routed_slots": 10})", "routed_slots"},
      {R"({"perturb_search_range": 4})", "perturb_search_range"},
      {R"({"reward_target": [1, 2]})", "reward_target"},
      {R"({"reward_components": [{"name": "hps", "weight": 1}]})", "reward_components"},
      {R"({"ema_decay_rate": 1.0})", "ema_decay_rate"},
  };
  for (const auto& [text, key] : bad) {
    CAPTURE(text);
    CHECK(mentions(message_of([&] { parse_config(text); }), key));
  }
}

TEST_CASE("random local windows need a feasible pivot for every choice") {
  RunConfig c;
  c.trainer.local_window = LocalWindowMode::random;
  c.trainer.local_window_choices = {6, 9, 12};
  CHECK_NOTHROW(validate(c));
  CHECK(local_windows(c.trainer) == std::vector<std::size_t>{6, 9, 12});
  CHECK(routed_slots_for(c.trainer, 6) == 3);
  CHECK(routed_slots_for(c.trainer, 12) == 9);
  c.trainer.local_window_choices = {3};
  CHECK(mentions(message_of([&] { validate(c); }), "routed_slots"));
  c.trainer.local_window = LocalWindowMode::fixed;
  CHECK(local_windows(c.trainer) == std::vector<std::size_t>{9});
  CHECK(routed_slots_for(c.trainer, 9) == 6);
}

TEST_CASE("overrides set typed values") {
  RunConfig c;
  apply_override(c, "kl_penalty_weight=0");
  apply_override(c, "surrogate=l2");
  apply_override(c, "out_dir=runs/x");
  apply_override(c, "local_window_choices=[6,9]");
  CHECK(c.trainer.kl_weight == 0.0);
  CHECK(c.trainer.surrogate == SurrogateKind::l2);
  CHECK(c.out_dir == "runs/x");
  CHECK(c.trainer.local_window_choices == std::vector<std::size_t>{6, 9});
  CHECK(mentions(message_of([&] { apply_override(c, "nope=1"); }), "nope"));
  CHECK(mentions(message_of([&] { apply_override(c, "novalue"); }), "key=value"));
}

TEST_CASE("load and save through files") {
  const auto dir = testing::temp_dir("config");
  RunConfig c;
  c.trainer.seed = 9;
  validate(c);
  save_config(c, dir / "c.json");
  CHECK(load_config(dir / "c.json") == c);
  const auto missing = (dir / "missing.json").string();
  CHECK(mentions(message_of([&] { load_config(missing); }), missing));
  std::ofstream(dir / "bad.json") << R"({"latent_dim": 0})";
  const std::string msg = message_of([&] { load_config(dir / "bad.json"); });
  CHECK(mentions(msg, "bad.json"));
  CHECK(mentions(msg, "latent_dim"));
}
