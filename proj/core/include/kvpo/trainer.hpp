// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// One training iteration: explore a group of routed branches, score them,
// replay them under the default context and take clipped-PPO + KL steps on
// the Gibbs branch policy.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kvpo/checkpoint.hpp"
#include "kvpo/config.hpp"
#include "kvpo/policy.hpp"

namespace kvpo {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double max_grad_norm = 1.0;
  int warmup_steps = 5;

  static OptimizerConfig from(const TrainerConfig& c);
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

struct UpdateInfo {
  double grad_norm = 0.0;     // before clipping
  double applied_norm = 0.0;  // after clipping
  double learning_rate = 0.0;
};

/// Linear warmup: step k (1-based) uses lr * min(1, k / warmup).
double warmup_learning_rate(const OptimizerConfig& config, std::int64_t step);

/// Global-norm clipping followed by one AdamW step:
///   g <- g * min(1, max_norm / ||g||)
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr_k (m_hat / (sqrt(v_hat) + eps) + wd p)
Params apply_update(const Params& params, const GradVector& grad, AdamState& state,
                    const OptimizerConfig& config, UpdateInfo* info = nullptr);

/// Immutable copy.
inline const Params snapshot(const Params& params) { return params; }

/// ema <- decay ema + (1 - decay) params.
std::vector<double> ema_update(std::span<const double> ema, std::span<const double> params,
                               double decay);

struct IterationRecord {
  int iteration = 0;
  int pivot = 0;
  int window = 0;
  std::size_t local_window = 0;
  double anchor_reward = 0.0;
  std::vector<double> branch_rewards;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  std::vector<double> energies;
  std::vector<double> advantages;
  LossBreakdown loss;
  double grad_norm = 0.0;
  double learning_rate = 0.0;
  bool skipped = false;
  std::string error;
  double wall_ms = 0.0;
};

/// One JSON object, no trailing newline. Field names are stable.
std::string to_json_line(const IterationRecord& record);

class Trainer {
 public:
  explicit Trainer(TrainerConfig config);
  Trainer(TrainerConfig config, Params initial);

  /// Full iteration with internally derived seeds; advances the counter
  /// whether or not the update is skipped.
  IterationRecord train_iteration();

  /// Scoring, replay and update on a prepared group with given rewards.
  IterationRecord step_on_group(const RolloutGroup& group, std::span<const double> branch_rewards,
                                double anchor_reward, std::size_t local_window = 0);

  /// Group for the current iteration under the current parameters.
  RolloutGroup explore();

  const TrainerConfig& config() const { return config_; }
  const Params& params() const { return params_; }
  const Params& reference() const { return reference_; }
  const Params& old_snapshot() const { return old_; }
  const std::vector<double>& ema() const { return ema_; }
  const AdamState& optimizer_state() const { return adam_; }
  int iteration() const { return iteration_; }
  const Generator& generator(std::size_t local_window = 0) const;
  const std::optional<RolloutGroup>& last_group() const { return last_group_; }

  Checkpoint checkpoint(std::string config_json) const;

 private:
  struct IterationPlan {
    std::uint64_t seed = 0;
    std::size_t local_window = 0;
    std::size_t routed_slots = 0;
    int pivot = 0;
    int window = 0;
  };
  IterationPlan plan() const;

  TrainerConfig config_;
  std::vector<double> prompt_;
  std::map<std::size_t, Generator> generators_;
  Params params_;
  Params reference_;
  Params old_;
  std::vector<double> ema_;
  AdamState adam_;
  int iteration_ = 0;
  std::optional<RolloutGroup> last_group_;
};

struct RunResult {
  std::vector<IterationRecord> records;
  Checkpoint final_checkpoint;
};

/// Trains for max_train_steps iterations. Writes <out_dir>/config.json, the
/// metrics stream, periodic checkpoint_<n>.ckpt files, final.ckpt and, when
/// enabled, trajectories.jsonl. Metrics are flushed per iteration so an
/// aborted run keeps its partial stream.
RunResult run(const RunConfig& config, std::ostream* log = nullptr);

/// One line per group member: iteration, branch id, routing, frames, reward.
std::string trajectory_lines(const RolloutGroup& group, int iteration);

}  // namespace kvpo
