// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "kvpo/error.hpp"
#include "kvpo/rewards.hpp"
#include "kvpo/seeds.hpp"

namespace kvpo {

using nlohmann::json;

OptimizerConfig OptimizerConfig::from(const TrainerConfig& c) {
  OptimizerConfig o;
  o.learning_rate = c.learning_rate;
  o.beta1 = c.adam_beta1;
  o.beta2 = c.adam_beta2;
  o.epsilon = c.adam_epsilon;
  o.weight_decay = c.weight_decay;
  o.max_grad_norm = c.max_grad_norm;
  o.warmup_steps = c.warmup_steps;
  return o;
}

double warmup_learning_rate(const OptimizerConfig& config, std::int64_t step) {
  if (step < 1) throw DomainError("optimizer steps are 1-based");
  if (config.warmup_steps <= 0 || step >= config.warmup_steps) return config.learning_rate;
  return config.learning_rate * static_cast<double>(step) /
         static_cast<double>(config.warmup_steps);
}

Params apply_update(const Params& params, const GradVector& grad, AdamState& state,
                    const OptimizerConfig& config, UpdateInfo* info) {
  const std::size_t n = params.size();
  if (grad.values.size() != n) throw ContractError("gradient length differs from parameters");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw ContractError("optimizer state length differs from parameters");
  }
  const double norm = grad.norm();
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  const double scale = norm > config.max_grad_norm ? config.max_grad_norm / norm : 1.0;

  state.step += 1;
  const double lr = warmup_learning_rate(config, state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

  Params out = params;
  double applied_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.values[i] * scale;
    applied_sq += g * g;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    out.values[i] -= lr * (m_hat / (std::sqrt(v_hat) + config.epsilon) +
                           config.weight_decay * params.values[i]);
  }
  if (info != nullptr) {
    info->grad_norm = norm;
    info->applied_norm = std::sqrt(applied_sq);
    info->learning_rate = lr;
  }
  return out;
}

std::vector<double> ema_update(std::span<const double> ema, std::span<const double> params,
                               double decay) {
  if (ema.size() != params.size()) throw ContractError("EMA length differs from parameters");
  if (!(decay >= 0.0 && decay < 1.0)) throw DomainError("EMA decay must lie in [0, 1)");
  std::vector<double> out(ema.size());
  for (std::size_t i = 0; i < ema.size(); ++i) {
    out[i] = decay * ema[i] + (1.0 - decay) * params[i];
  }
  return out;
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json array_of(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(finite_or_null(x));
  return a;
}

}  // namespace

std::string to_json_line(const IterationRecord& r) {
  json j;
  j["iteration"] = r.iteration;
  j["pivot"] = r.pivot;
  j["window"] = r.window;
  j["local_window"] = r.local_window;
  j["anchor_reward"] = finite_or_null(r.anchor_reward);
  j["branch_rewards"] = array_of(r.branch_rewards);
  j["reward_mean"] = finite_or_null(r.reward_mean);
  j["reward_std"] = finite_or_null(r.reward_std);
  j["energies"] = array_of(r.energies);
  j["advantages"] = array_of(r.advantages);
  j["ppo_loss"] = finite_or_null(r.loss.ppo);
  j["kl"] = finite_or_null(r.loss.kl);
  j["total_loss"] = finite_or_null(r.loss.total);
  j["ratios"] = array_of(r.loss.per_branch_ratio);
  j["grad_norm"] = finite_or_null(r.grad_norm);
  j["learning_rate"] = r.learning_rate;
  j["skipped"] = r.skipped;
  if (!r.error.empty()) j["error"] = r.error;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

Trainer::Trainer(TrainerConfig config)
    : Trainer(config, Params{}) {}

Trainer::Trainer(TrainerConfig config, Params initial) : config_(std::move(config)) {
  prompt_ = config_.prompt();
  for (std::size_t w : local_windows(config_)) {
    GeneratorConfig g = config_.generator_config();
    g.local_size = w;
    generators_.emplace(w, Generator(g, prompt_));
  }
  const Generator& base = generators_.begin()->second;
  if (initial.values.empty()) {
    params_ = param_init(base.net().network_spec(), config_.seed);
  } else {
    if (initial.layout != base.net().layout()) {
      throw ConfigError("initial parameters do not match the network layout");
    }
    params_ = std::move(initial);
  }
  check_finite(params_.values, params_.layout, "initial parameters");
  reference_ = snapshot(params_);
  old_ = snapshot(params_);
  ema_ = params_.values;
}

const Generator& Trainer::generator(std::size_t local_window) const {
  if (local_window == 0) local_window = config_.local_size;
  auto it = generators_.find(local_window);
  if (it == generators_.end()) {
    throw ContractError("no generator for local window " + std::to_string(local_window));
  }
  return it->second;
}

Trainer::IterationPlan Trainer::plan() const {
  IterationPlan p;
  p.seed = derive_seed(config_.seed, SeedStream::iteration,
                       static_cast<std::uint64_t>(iteration_));
  const auto windows = local_windows(config_);
  std::size_t pick = 0;
  if (windows.size() > 1) {
    std::mt19937_64 rng(derive_seed(p.seed, SeedStream::local_window, 0));
    pick = std::uniform_int_distribution<std::size_t>(0, windows.size() - 1)(rng);
  }
  p.local_window = windows[pick];
  p.routed_slots = routed_slots_for(config_, p.local_window);

  const int lo = min_pivot(generator(p.local_window).config(), p.routed_slots);
  const int hi = std::min(config_.perturb_search_range, config_.num_blocks);
  if (lo > hi) throw ConfigError("no feasible pivot block");
  std::mt19937_64 rng(derive_seed(p.seed, SeedStream::pivot, 0));
  p.pivot = std::uniform_int_distribution<int>(lo, hi)(rng);
  p.window = std::min(config_.perturbed_blocks, config_.num_blocks - p.pivot + 1);
  return p;
}

RolloutGroup Trainer::explore() {
  const IterationPlan p = plan();
  GroupSpec spec;
  spec.num_blocks = config_.num_blocks;
  spec.pivot = p.pivot;
  spec.window = p.window;
  spec.branches = config_.branch_number;
  spec.routed_slots = p.routed_slots;
  spec.routing_mode = config_.routing_mode;
  spec.seeds = GroupSeeds::derive(derive_seed(p.seed, SeedStream::block_noise, 0),
                                  derive_seed(p.seed, SeedStream::routing, 0),
                                  config_.branch_number);
  return rollout_group(generator(p.local_window), params_, spec, config_.threads);
}

IterationRecord Trainer::train_iteration() {
  const auto start = std::chrono::steady_clock::now();
  const IterationPlan p = plan();
  RolloutGroup group = explore();

  const double anchor_reward = composite(group.anchor, config_.reward);
  group.anchor.reward = anchor_reward;
  std::vector<double> rewards;
  for (auto& br : group.branches) {
    br.reward = composite(br, config_.reward);
    rewards.push_back(br.reward);
  }
  last_group_ = std::move(group);
  IterationRecord r = step_on_group(*last_group_, rewards, anchor_reward, p.local_window);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                  .count();
  return r;
}

IterationRecord Trainer::step_on_group(const RolloutGroup& group,
                                       std::span<const double> branch_rewards,
                                       double anchor_reward, std::size_t local_window) {
  const auto start = std::chrono::steady_clock::now();
  if (branch_rewards.size() != group.branches.size()) {
    throw ContractError("one reward per branch required");
  }
  const Generator& gen = generator(local_window);
  const LossConfig loss_cfg = config_.loss_config();
  const OptimizerConfig opt = OptimizerConfig::from(config_);

  IterationRecord r;
  r.iteration = iteration_;
  r.pivot = group.pivot;
  r.window = group.window;
  r.local_window = gen.config().local_size;
  r.anchor_reward = anchor_reward;
  r.branch_rewards.assign(branch_rewards.begin(), branch_rewards.end());
  ++iteration_;

  const Advantages adv = advantages(branch_rewards, config_.advantage_clip_max);
  r.reward_mean = adv.mean_reward;
  r.reward_std = adv.std;
  r.advantages = adv.values;

  old_ = snapshot(params_);
  const Params iteration_start = params_;
  const AdamState adam_start = adam_;

  try {
    const auto old_ctx =
        build_replay_contexts(gen, old_, group, config_.replay_context, config_.threads);
    const PolicyEval<double> old_eval =
        gibbs(surrogate_energies<double>(gen, old_.values, group, old_ctx, loss_cfg.surrogate),
              loss_cfg.tau);
    const auto ref_ctx =
        build_replay_contexts(gen, reference_, group, config_.replay_context, config_.threads);
    const PolicyEval<double> ref_eval = gibbs(
        surrogate_energies<double>(gen, reference_.values, group, ref_ctx, loss_cfg.surrogate),
        loss_cfg.tau);
    r.energies = old_eval.energies;

    if (guard(branch_rewards, anchor_reward)) {
      r.skipped = true;
      r.loss.skipped = true;
      r.loss.energies = old_eval.energies;
      r.loss.kl = kl_penalty(old_eval, ref_eval);
      r.loss.per_branch_ratio.assign(group.branches.size(), 1.0);
    } else {
      for (int epoch = 0; epoch < config_.ppo_epochs; ++epoch) {
        const ReplayContexts ctx =
            epoch == 0 ? old_ctx
                       : build_replay_contexts(gen, params_, group, config_.replay_context,
                                               config_.threads);
        LossAndGrad lg = total_loss(gen, params_, group, ctx, old_eval, ref_eval, adv, loss_cfg);
        UpdateInfo info;
        params_ = apply_update(params_, lg.grad, adam_, opt, &info);
        check_finite(params_.values, params_.layout, "updated parameters");
        r.loss = std::move(lg.loss);
        r.grad_norm = info.grad_norm;
        r.learning_rate = info.learning_rate;
      }
      ema_ = ema_update(ema_, params_.values, config_.ema_decay);
    }
  } catch (const NumericalError& e) {
    params_ = iteration_start;
    adam_ = adam_start;
    r.error = e.what();
    r.skipped = true;
    r.loss.skipped = true;
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                  .count();
  return r;
}

Checkpoint Trainer::checkpoint(std::string config_json) const {
  Checkpoint c;
  c.params = params_;
  c.ema = ema_;
  c.iteration = static_cast<std::uint64_t>(iteration_);
  c.config_json = std::move(config_json);
  return c;
}

std::string trajectory_lines(const RolloutGroup& group, int iteration) {
  std::string out;
  auto emit = [&](const BranchTrajectory& br) {
    json j;
    j["iteration"] = iteration;
    j["branch_id"] = br.branch_id;
    j["pivot"] = br.pivot;
    j["window"] = br.window;
    j["routing"] = br.routing ? json(br.routing->indices) : json(nullptr);
    json blocks = json::array();
    for (const auto& b : br.blocks) {
      json frames = json::array();
      for (const auto& f : b.frames) frames.push_back(array_of(f.values));
      blocks.push_back({{"block", b.block_index}, {"frames", frames}});
    }
    j["blocks"] = std::move(blocks);
    j["reward"] = finite_or_null(br.reward);
    out += j.dump();
    out += '\n';
  };
  emit(group.anchor);
  for (const auto& br : group.branches) emit(br);
  return out;
}

RunResult run(const RunConfig& config, std::ostream* log) {
  namespace fs = std::filesystem;
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  const std::string config_json = to_json(config);
  save_config(config, dir / "config.json");

  std::ofstream metrics(dir / config.metrics_file);
  if (!metrics) throw Error("cannot open metrics file in '" + dir.string() + "'");
  std::ofstream trajectories;
  if (config.dump_trajectories) {
    trajectories.open(dir / "trajectories.jsonl");
    if (!trajectories) throw Error("cannot open trajectory dump in '" + dir.string() + "'");
  }

  Trainer trainer(config.trainer);
  RunResult result;
  const int total = config.trainer.max_iterations;
  for (int it = 0; it < total; ++it) {
    IterationRecord rec = trainer.train_iteration();
    metrics << to_json_line(rec) << '\n' << std::flush;
    if (config.dump_trajectories && trainer.last_group()) {
      trajectories << trajectory_lines(*trainer.last_group(), rec.iteration) << std::flush;
    }
    if (log != nullptr) {
      *log << "iter " << rec.iteration << " pivot " << rec.pivot << " anchor_reward "
           << rec.anchor_reward << " loss " << rec.loss.total << " kl " << rec.loss.kl
           << (rec.skipped ? " skipped" : "") << (rec.error.empty() ? "" : " error: " + rec.error)
           << '\n';
    }
    result.records.push_back(std::move(rec));
    if (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 && it + 1 < total) {
      save_checkpoint(trainer.checkpoint(config_json),
                      dir / ("checkpoint_" + std::to_string(it + 1) + ".ckpt"));
    }
  }
  result.final_checkpoint = trainer.checkpoint(config_json);
  save_checkpoint(result.final_checkpoint, dir / "final.ckpt");
  return result;
}

}  // namespace kvpo
