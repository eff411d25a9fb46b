// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "kvpo/error.hpp"

namespace kvpo {

namespace {

AblationPreset sweep(std::string name, std::string description, const std::string& key,
                     const std::vector<std::string>& values) {
  AblationPreset p{std::move(name), std::move(description), {}};
  for (const auto& v : values) p.variants.push_back({key + "=" + v, {key + "=" + v}});
  return p;
}

}  // namespace

const std::vector<AblationPreset>& ablation_presets() {
  static const std::vector<AblationPreset> presets = [] {
    std::vector<AblationPreset> p;
    p.push_back(sweep("perturbed-blocks", "number of blocks explored after the pivot",
                      "perturbed_blocks", {"3", "5", "7"}));
    p.push_back(sweep("routed-slots", "routed entries in the local window", "routed_slots",
                      {"3", "6", "9"}));
    p.push_back({"local-kv",
                 "fixed local window of 9 against a random draw from {6, 9, 12}",
                 {{"fixed-9", {"local_window=fixed", "local_size=9"}},
                  {"random-6-9-12",
                   {"local_window=random", "local_size=9", "local_window_choices=[6,9,12]"}}}});
    p.push_back(sweep("solver-steps", "gradient-carrying replay steps",
                      "gradient_carrying_replay_steps", {"1", "2", "3", "4"}));
    p.push_back(sweep("surrogate", "velocity-energy surrogate against latent l2", "surrogate",
                      {"tve", "l2"}));
    p.push_back(sweep("kl-weight", "KL penalty weight", "kl_penalty_weight",
                      {"0", "1", "3", "5", "10", "20"}));
    return p;
  }();
  return presets;
}

const AblationPreset& find_preset(const std::string& name) {
  std::string names;
  for (const auto& p : ablation_presets()) {
    if (p.name == name) return p;
    names += (names.empty() ? "" : ", ") + p.name;
  }
  throw ConfigError("unknown ablation preset '" + name + "' (available: " + names + ")");
}

RewardSummary summarize(std::span<const IterationRecord> records, int window) {
  RewardSummary s;
  s.iterations = static_cast<int>(records.size());
  if (records.empty()) return s;
  const std::size_t n = std::min(records.size(), static_cast<std::size_t>(std::max(window, 1)));
  for (std::size_t i = 0; i < n; ++i) {
    s.first_mean += records[i].anchor_reward;
    s.last_mean += records[records.size() - n + i].anchor_reward;
  }
  s.first_mean /= static_cast<double>(n);
  s.last_mean /= static_cast<double>(n);
  for (const auto& r : records) {
    s.skipped += r.skipped ? 1 : 0;
    s.errors += r.error.empty() ? 0 : 1;
    if (!std::isfinite(r.loss.kl)) s.kl_finite = false;
    else s.max_kl = std::max(s.max_kl, r.loss.kl);
  }
  return s;
}

std::vector<VariantResult> run_ablation(const RunConfig& base, const AblationPreset& preset,
                                        std::ostream* log) {
  std::vector<VariantResult> out;
  for (const auto& v : preset.variants) {
    RunConfig cfg = base;
    for (const auto& o : v.overrides) apply_override(cfg, o);
    cfg.out_dir = (std::filesystem::path(base.out_dir) / preset.name / v.label).string();
    validate(cfg);
    if (log != nullptr) *log << "[" << preset.name << "] running " << v.label << '\n';
    const RunResult result = run(cfg);
    out.push_back({v.label, summarize(result.records)});
  }
  return out;
}

std::string ablation_table(const std::string& preset, std::span<const VariantResult> results) {
  std::string out;
  for (const auto& r : results) {
    nlohmann::json j;
    j["preset"] = preset;
    j["variant"] = r.label;
    j["final_mean_reward"] = r.summary.last_mean;
    j["first_mean_reward"] = r.summary.first_mean;
    j["iterations"] = r.summary.iterations;
    j["skipped"] = r.summary.skipped;
    j["max_kl"] = r.summary.max_kl;
    out += j.dump() + '\n';
  }
  return out;
}

}  // namespace kvpo
