// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kvpo/chr.hpp"
#include "kvpo/policy.hpp"
#include "kvpo/rewards.hpp"

namespace kvpo {

enum class LocalWindowMode { fixed, random };

/// Training hyperparameters. Field comments give the configuration key.
struct TrainerConfig {
  // model
  std::size_t latent_dim = 8;       // latent_dim
  std::size_t hidden_dim = 16;      // hidden_dim
  std::size_t prompt_dim = 4;       // prompt_dim
  int frames_per_block = 3;         // frames_per_block
  int denoising_timesteps = 4;      // denoising_timesteps
  std::size_t sink_size = 3;        // sink_size
  std::size_t local_size = 9;       // local_size
  int num_blocks = 8;               // num_blocks

  // exploration
  int branch_number = 8;                             // branch_number
  int perturbed_blocks = 5;                          // perturbed_blocks
  std::size_t routed_slots = 6;                      // routed_slots
  int perturb_search_range = 7;                      // perturb_search_range
  RoutingMode routing_mode = RoutingMode::fixed;     // routing_mode
  LocalWindowMode local_window = LocalWindowMode::fixed;  // local_window
  std::vector<std::size_t> local_window_choices{6, 9, 12};  // local_window_choices
  ReplayContextMode replay_context = ReplayContextMode::own_history;  // replay_context

  // surrogate and loss
  SurrogateKind surrogate = SurrogateKind::tve;  // surrogate
  int grad_carrying_steps = 2;                   // gradient_carrying_replay_steps
  EnergyValueMode energy_value = EnergyValueMode::all_steps;  // energy_value_steps
  double temperature = 1.0;                      // temperature
  double l2_sigma = 1.0;                         // l2_sigma
  double clip_low = 0.1;                         // clip_range_low
  double clip_high = 0.2;                        // clip_range_high
  double advantage_clip_max = 2.5;               // advantage_clip_max
  double kl_weight = 5.0;                        // kl_penalty_weight

  // optimizer
  double learning_rate = 1e-3;     // learning_rate
  int warmup_steps = 5;            // warmup_steps
  double max_grad_norm = 1.0;      // max_gradient_norm
  double adam_beta1 = 0.9;         // adam_beta1
  double adam_beta2 = 0.999;       // adam_beta2
  double adam_epsilon = 1e-8;      // adam_epsilon
  double weight_decay = 0.0;       // weight_decay
  double ema_decay = 0.999;        // ema_decay_rate
  int ppo_epochs = 1;              // ppo_epochs
  int max_iterations = 200;        // max_train_steps

  // reward
  RewardSpec reward;  // reward_components, reward_segments, reward_target

  // seeds and execution
  std::uint64_t seed = 0;         // seed
  std::uint64_t prompt_seed = 7;  // prompt_seed
  int threads = 1;                // threads

  bool operator==(const TrainerConfig&) const = default;

  GeneratorConfig generator_config() const;
  LossConfig loss_config() const;
  /// Fixed prompt vector drawn from prompt_seed.
  std::vector<double> prompt() const;
};

struct RunConfig {
  TrainerConfig trainer;
  std::string out_dir = "runs/default";  // out_dir
  std::string metrics_file = "metrics.jsonl";  // metrics_file, relative to out_dir
  int checkpoint_every = 50;  // checkpoint_every, 0 disables periodic checkpoints
  bool dump_trajectories = false;  // dump_trajectories

  bool operator==(const RunConfig&) const = default;
};

/// Local window lengths the trainer may draw from.
std::vector<std::size_t> local_windows(const TrainerConfig& config);

/// Routed slots for a local window of `window` entries. The recent part keeps
/// local_size - routed_slots entries in every window; 0 means infeasible.
std::size_t routed_slots_for(const TrainerConfig& config, std::size_t window);

/// Fills defaults that depend on other fields (reward target) and checks
/// every field. Throws ConfigError naming the offending key.
void validate(RunConfig& config);

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config, int indent = 2);
void save_config(const RunConfig& config, const std::filesystem::path& path);

/// Applies `key=value` where value is JSON (bare strings accepted). Throws
/// ConfigError for unknown keys.
void apply_override(RunConfig& config, const std::string& assignment);

/// Every accepted configuration key.
std::vector<std::string> config_keys();

}  // namespace kvpo
