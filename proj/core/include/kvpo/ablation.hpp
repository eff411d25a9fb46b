// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kvpo/trainer.hpp"

namespace kvpo {

struct AblationVariant {
  std::string label;
  std::vector<std::string> overrides;  // key=value, applied to the base config
};

struct AblationPreset {
  std::string name;
  std::string description;
  std::vector<AblationVariant> variants;
};

/// perturbed-blocks, routed-slots, local-kv, solver-steps, surrogate, kl-weight.
const std::vector<AblationPreset>& ablation_presets();

/// Throws ConfigError listing the available presets when `name` is unknown.
const AblationPreset& find_preset(const std::string& name);

/// Mean anchor reward over the first and last `window` records.
struct RewardSummary {
  double first_mean = 0.0;
  double last_mean = 0.0;
  int iterations = 0;
  int skipped = 0;
  int errors = 0;
  double max_kl = 0.0;
  bool kl_finite = true;
};

RewardSummary summarize(std::span<const IterationRecord> records, int window = 20);

struct VariantResult {
  std::string label;
  RewardSummary summary;
};

/// Runs every variant with the base seeds; variant v writes to
/// <out_dir>/<preset>/<label>.
std::vector<VariantResult> run_ablation(const RunConfig& base, const AblationPreset& preset,
                                        std::ostream* log = nullptr);

/// One JSON object per variant: label, final_mean_reward, first_mean_reward,
/// iterations, skipped, max_kl.
std::string ablation_table(const std::string& preset, std::span<const VariantResult> results);

}  // namespace kvpo
