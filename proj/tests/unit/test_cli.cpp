// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "kvpo/checkpoint.hpp"
#include "kvpo/trainer.hpp"
#include "support.hpp"

using namespace kvpo;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

bool mentions(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("help and missing subcommands") {
  CHECK(invoke({"--help"}).code == cli::kOk);
  CHECK(mentions(invoke({"--help"}).out, "gradcheck"));
  CHECK(invoke({}).code == cli::kConfigError);
  CHECK(invoke({"frobnicate"}).code == cli::kConfigError);
}

TEST_CASE("a missing config file names the path") {
  const auto r = invoke({"--config", "/nonexistent/kvpo.json", "train"});
  CHECK(r.code == cli::kConfigError);
  CHECK(mentions(r.err, "/nonexistent/kvpo.json"));
}

TEST_CASE("field-level diagnostics for bad configs and overrides") {
  const auto dir = testing::temp_dir("cli_bad");
  std::ofstream(dir / "bad.json") << R"({"temperature": -2})";
  const auto r = invoke({"--config", (dir / "bad.json").string(), "train"});
  CHECK(r.code == cli::kConfigError);
  CHECK(mentions(r.err, "temperature"));
  const auto o = invoke({"--set", "not_a_key=3", "train", "--max-iters", "0"});
  CHECK(o.code == cli::kConfigError);
  CHECK(mentions(o.err, "not_a_key"));
}

TEST_CASE("train with zero iterations checkpoints the initial parameters") {
  const auto dir = testing::temp_dir("cli_train0");
  const auto r = invoke({"--out-dir", dir.string(), "--seed", "11", "train", "--max-iters", "0"});
  REQUIRE(r.code == cli::kOk);
  TrainerConfig c;
  c.seed = 11;
  RunConfig rc;
  rc.trainer = c;
  validate(rc);
  CHECK(load_checkpoint(dir / "final.ckpt").params == Trainer(rc.trainer).params());
  CHECK(count_lines(dir / "metrics.jsonl") == 0);
}

TEST_CASE("train emits one metrics record per iteration") {
  const auto dir = testing::temp_dir("cli_train3");
  const auto r = invoke({"train", "--max-iters", "3", "--out-dir", dir.string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(count_lines(dir / "metrics.jsonl") == 3);
  const auto inspect = invoke({"inspect", (dir / "metrics.jsonl").string()});
  CHECK(inspect.code == cli::kOk);
  CHECK(mentions(inspect.out, "3 records"));
  const auto ck = invoke({"inspect", (dir / "final.ckpt").string()});
  CHECK(ck.code == cli::kOk);
  CHECK(mentions(ck.out, "iteration 3"));
  CHECK(mentions(ck.out, "head.out.weight"));
  CHECK(invoke({"inspect", (dir / "nope").string()}).code == cli::kRuntimeError);
}

TEST_CASE("gradcheck passes on fresh parameters and is repeatable") {
  const std::vector<std::string> args{"--seed", "2", "gradcheck", "--instances", "3",
                                      "--identity-instances", "10"};
  const auto a = invoke(args);
  const auto b = invoke(args);
  CHECK(a.code == cli::kOk);
  CHECK(a.out == b.out);
  CHECK(mentions(a.out, "tve"));
  CHECK(mentions(a.out, "PASS"));
}

TEST_CASE("gradcheck fails on an injected backward fault") {
  const auto r = invoke({"gradcheck", "--instances", "2", "--identity-instances", "5",
                         "--inject-fault"});
  CHECK(r.code == cli::kCheckFailure);
  CHECK(mentions(r.out, "failing check"));
}

TEST_CASE("unknown ablation preset lists the available ones") {
  const auto r = invoke({"ablate", "no-such-preset"});
  CHECK(r.code == cli::kConfigError);
  for (const char* p : {"perturbed-blocks", "routed-slots", "local-kv", "solver-steps",
                        "surrogate", "kl-weight"}) {
    CHECK(mentions(r.err, p));
  }
}

TEST_CASE("ablation writes a comparison table") {
  const auto dir = testing::temp_dir("cli_ablate");
  const auto r = invoke({"--out-dir", dir.string(), "ablate", "surrogate", "--max-iters", "2"});
  REQUIRE(r.code == cli::kOk);
  std::ifstream in(dir / "surrogate" / "summary.jsonl");
  std::vector<std::string> labels;
  for (std::string line; std::getline(in, line);) {
    labels.push_back(nlohmann::json::parse(line).at("variant").get<std::string>());
  }
  CHECK(labels == std::vector<std::string>{"surrogate=tve", "surrogate=l2"});
}

TEST_CASE("same seed gives identical metrics streams") {
  const auto a = testing::temp_dir("cli_det_a");
  const auto b = testing::temp_dir("cli_det_b");
  REQUIRE(invoke({"--seed", "4", "--out-dir", a.string(), "train", "--max-iters", "2"}).code == 0);
  REQUIRE(invoke({"--seed", "4", "--out-dir", b.string(), "train", "--max-iters", "2"}).code == 0);
  auto strip = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string all;
    for (std::string line; std::getline(in, line);) {
      auto j = nlohmann::json::parse(line);
      j.erase("wall_ms");
      all += j.dump() + "\n";
    }
    return all;
  };
  CHECK(strip(a / "metrics.jsonl") == strip(b / "metrics.jsonl"));
}
