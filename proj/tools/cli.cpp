// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include <nlohmann/json.hpp>

#include "kvpo/ablation.hpp"
#include "kvpo/checkpoint.hpp"
#include "kvpo/config.hpp"
#include "kvpo/error.hpp"
#include "kvpo/gradcheck.hpp"
#include "kvpo/trainer.hpp"

namespace kvpo::cli {

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::optional<int> max_iters;
  std::vector<std::string> sets;
};

RunConfig resolve(const Globals& g) {
  RunConfig c;
  if (!g.config_path.empty()) c = load_config(g.config_path);
  for (const auto& s : g.sets) apply_override(c, s);
  if (g.seed) c.trainer.seed = *g.seed;
  if (g.out_dir) c.out_dir = *g.out_dir;
  if (g.threads) c.trainer.threads = *g.threads;
  if (g.max_iters) c.trainer.max_iterations = *g.max_iters;
  validate(c);
  return c;
}

int cmd_train(const Globals& g, std::ostream& out) {
  const RunConfig c = resolve(g);
  const RunResult r = run(c, &out);
  out << "wrote " << r.records.size() << " iteration records to "
      << (std::filesystem::path(c.out_dir) / c.metrics_file).string() << '\n';
  out << "final checkpoint " << (std::filesystem::path(c.out_dir) / "final.ckpt").string()
      << '\n';
  return kOk;
}

int cmd_gradcheck(const Globals& g, int instances, int identity_instances, bool inject_fault,
                  std::ostream& out) {
  const RunConfig c = resolve(g);
  GradcheckOptions o;
  o.instances = instances;
  o.identity_instances = identity_instances;
  o.seed = c.trainer.seed;
  if (inject_fault) {
    // Negative control: a backward pass that drops half of the first entry.
    o.backward_fault = [](GradVector& grad) {
      if (!grad.values.empty()) grad.values.front() = 0.5 * grad.values.front() + 1e-3;
    };
  }
  const GradcheckReport report = run_gradcheck(c.trainer, o);
  out << report.summary();
  if (!report.passed()) {
    for (const auto& check : report.checks) {
      if (!check.passed()) out << "failing check: " << check.name << '\n';
    }
    return kCheckFailure;
  }
  return kOk;
}

int cmd_ablate(const Globals& g, const std::string& preset_name, std::ostream& out) {
  const AblationPreset& preset = find_preset(preset_name);
  const RunConfig base = resolve(g);
  const auto results = run_ablation(base, preset, &out);
  const std::string table = ablation_table(preset.name, results);
  out << table;
  const auto dir = std::filesystem::path(base.out_dir) / preset.name;
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "summary.jsonl") << table;
  return kOk;
}

void inspect_checkpoint(const Checkpoint& c, std::ostream& out) {
  out << "checkpoint version " << kCheckpointVersion << ", iteration " << c.iteration << ", "
      << c.params.size() << " parameters, EMA " << (c.ema ? "present" : "absent") << '\n';
  for (const auto& s : c.params.layout.segments()) {
    double sq = 0.0;
    for (std::size_t i = 0; i < s.length; ++i) {
      sq += c.params.values[s.offset + i] * c.params.values[s.offset + i];
    }
    char line[128];
    std::snprintf(line, sizeof(line), "  %-20s offset %6zu  length %6zu  norm %.6g\n",
                  s.name.c_str(), s.offset, s.length, std::sqrt(sq));
    out << line;
  }
  if (!c.config_json.empty()) out << "configuration:\n" << c.config_json << '\n';
}

void inspect_metrics(std::istream& in, std::ostream& out) {
  out << "iter  pivot  anchor_reward      total_loss          kl  skipped\n";
  std::string line;
  int n = 0;
  int skipped = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    auto num = [&](const char* k) {
      return j.contains(k) && j[k].is_number() ? j[k].get<double>() : std::nan("");
    };
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%4d  %5d  %13.6f  %14.6e  %10.3e  %s\n",
                  j.value("iteration", -1), j.value("pivot", -1), num("anchor_reward"),
                  num("total_loss"), num("kl"), j.value("skipped", false) ? "yes" : "no");
    out << buf;
    ++n;
    skipped += j.value("skipped", false) ? 1 : 0;
  }
  out << n << " records, " << skipped << " skipped\n";
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() == 8 && std::string(magic, 8) == "KVPOCKPT") {
    inspect_checkpoint(load_checkpoint(path), out);
  } else {
    in.clear();
    in.seekg(0);
    inspect_metrics(in, out);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"kvpo: routed key/value exploration with a velocity-energy policy"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--threads", g.threads, "worker threads for rollouts and replay");
  app.add_option("--set", g.sets, "configuration override key=value (repeatable)");

  auto* train = app.add_subcommand("train", "run the training loop");
  train->fallthrough();
  train->add_option("--max-iters", g.max_iters, "override max_train_steps");

  int instances = 20;
  int identity_instances = 100;
  bool inject_fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "check gradients against oracles");
  gradcheck->fallthrough();
  gradcheck->add_option("--instances", instances, "finite-difference instances")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--identity-instances", identity_instances,
                        "closed-form identity instances")
      ->check(CLI::PositiveNumber);
  gradcheck->add_flag("--inject-fault", inject_fault, "corrupt the backward pass (test only)")
      ->group("");

  std::string preset;
  auto* ablate = app.add_subcommand("ablate", "run an ablation preset");
  ablate->fallthrough();
  std::string preset_help = "preset name:";
  for (const auto& p : ablation_presets()) preset_help += " " + p.name;
  ablate->add_option("preset", preset, preset_help)->required();
  ablate->add_option("--max-iters", g.max_iters, "override max_train_steps");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "pretty-print a checkpoint or metrics file");
  inspect->add_option("path", inspect_path)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (*train) return cmd_train(g, out);
    if (*gradcheck) return cmd_gradcheck(g, instances, identity_instances, inject_fault, out);
    if (*ablate) return cmd_ablate(g, preset, out);
    if (*inspect) return cmd_inspect(inspect_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace kvpo::cli
