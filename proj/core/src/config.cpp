// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kvpo/error.hpp"

namespace kvpo {

using nlohmann::json;

GeneratorConfig TrainerConfig::generator_config() const {
  GeneratorConfig g;
  g.shape = NetShape{latent_dim, hidden_dim, prompt_dim};
  g.frames_per_block = frames_per_block;
  g.grid = TimeGrid{denoising_timesteps};
  g.sink_size = sink_size;
  g.local_size = local_size;
  return g;
}

LossConfig TrainerConfig::loss_config() const {
  LossConfig l;
  l.tau = temperature;
  l.eps_low = clip_low;
  l.eps_high = clip_high;
  l.beta = kl_weight;
  l.surrogate.kind = surrogate;
  l.surrogate.tve.grad_steps = grad_carrying_steps;
  l.surrogate.tve.value_mode = energy_value;
  l.surrogate.l2_sigma = l2_sigma;
  return l;
}

std::vector<double> TrainerConfig::prompt() const {
  return gaussian_noise(prompt_seed, prompt_dim);
}

namespace {

template <class E>
struct EnumNames {
  std::vector<std::pair<E, std::string>> names;

  std::string to_string(E e) const {
    for (const auto& [v, n] : names) {
      if (v == e) return n;
    }
    return "?";
  }
  E parse(const std::string& key, const std::string& s) const {
    std::string allowed;
    for (const auto& [v, n] : names) {
      if (n == s) return v;
      allowed += (allowed.empty() ? "" : ", ") + n;
    }
    throw ConfigError("key '" + key + "': unknown value '" + s + "' (expected one of " +
                      allowed + ")");
  }
};

const EnumNames<RoutingMode> kRoutingModes{
    {{RoutingMode::fixed, "fixed"}, {RoutingMode::per_block, "per_block"}}};
const EnumNames<LocalWindowMode> kWindowModes{
    {{LocalWindowMode::fixed, "fixed"}, {LocalWindowMode::random, "random"}}};
const EnumNames<ReplayContextMode> kContextModes{
    {{ReplayContextMode::own_history, "own"}, {ReplayContextMode::anchor_history, "anchor"}}};
const EnumNames<SurrogateKind> kSurrogates{{{SurrogateKind::tve, "tve"}, {SurrogateKind::l2, "l2"}}};
const EnumNames<EnergyValueMode> kEnergyModes{
    {{EnergyValueMode::all_steps, "all"}, {EnergyValueMode::grad_steps_only, "grad_only"}}};

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T>
T read(const std::string& key, const json& j) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

template <class T, class M>
Field scalar(std::string key, M member) {
  return Field{key, [member](const RunConfig& c) { return json(member(const_cast<RunConfig&>(c))); },
               [key, member](RunConfig& c, const json& j) { member(c) = read<T>(key, j); }};
}

template <class E>
Field enumerated(std::string key, const EnumNames<E>& names, std::function<E&(RunConfig&)> member) {
  return Field{key,
               [&names, member](const RunConfig& c) {
                 return json(names.to_string(member(const_cast<RunConfig&>(c))));
               },
               [key, &names, member](RunConfig& c, const json& j) {
                 member(c) = names.parse(key, read<std::string>(key, j));
               }};
}

#define KVPO_FIELD(T, key, expr) \
  scalar<T>(key, [](RunConfig & c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        KVPO_FIELD(std::size_t, "latent_dim", c.trainer.latent_dim),
        KVPO_FIELD(std::size_t, "hidden_dim", c.trainer.hidden_dim),
        KVPO_FIELD(std::size_t, "prompt_dim", c.trainer.prompt_dim),
        KVPO_FIELD(int, "frames_per_block", c.trainer.frames_per_block),
        KVPO_FIELD(int, "denoising_timesteps", c.trainer.denoising_timesteps),
        KVPO_FIELD(std::size_t, "sink_size", c.trainer.sink_size),
        KVPO_FIELD(std::size_t, "local_size", c.trainer.local_size),
        KVPO_FIELD(int, "num_blocks", c.trainer.num_blocks),
        KVPO_FIELD(int, "branch_number", c.trainer.branch_number),
        KVPO_FIELD(int, "perturbed_blocks", c.trainer.perturbed_blocks),
        KVPO_FIELD(std::size_t, "routed_slots", c.trainer.routed_slots),
        KVPO_FIELD(int, "perturb_search_range", c.trainer.perturb_search_range),
        enumerated<RoutingMode>("routing_mode", kRoutingModes,
                                [](RunConfig& c) -> RoutingMode& { return c.trainer.routing_mode; }),
        enumerated<LocalWindowMode>(
            "local_window", kWindowModes,
            [](RunConfig& c) -> LocalWindowMode& { return c.trainer.local_window; }),
        KVPO_FIELD(std::vector<std::size_t>, "local_window_choices",
                   c.trainer.local_window_choices),
        enumerated<ReplayContextMode>(
            "replay_context", kContextModes,
            [](RunConfig& c) -> ReplayContextMode& { return c.trainer.replay_context; }),
        enumerated<SurrogateKind>("surrogate", kSurrogates,
                                  [](RunConfig& c) -> SurrogateKind& { return c.trainer.surrogate; }),
        KVPO_FIELD(int, "gradient_carrying_replay_steps", c.trainer.grad_carrying_steps),
        enumerated<EnergyValueMode>(
            "energy_value_steps", kEnergyModes,
            [](RunConfig& c) -> EnergyValueMode& { return c.trainer.energy_value; }),
        KVPO_FIELD(double, "temperature", c.trainer.temperature),
        KVPO_FIELD(double, "l2_sigma", c.trainer.l2_sigma),
        KVPO_FIELD(double, "clip_range_low", c.trainer.clip_low),
        KVPO_FIELD(double, "clip_range_high", c.trainer.clip_high),
        KVPO_FIELD(double, "advantage_clip_max", c.trainer.advantage_clip_max),
        KVPO_FIELD(double, "kl_penalty_weight", c.trainer.kl_weight),
        KVPO_FIELD(double, "learning_rate", c.trainer.learning_rate),
        KVPO_FIELD(int, "warmup_steps", c.trainer.warmup_steps),
        KVPO_FIELD(double, "max_gradient_norm", c.trainer.max_grad_norm),
        KVPO_FIELD(double, "adam_beta1", c.trainer.adam_beta1),
        KVPO_FIELD(double, "adam_beta2", c.trainer.adam_beta2),
        KVPO_FIELD(double, "adam_epsilon", c.trainer.adam_epsilon),
        KVPO_FIELD(double, "weight_decay", c.trainer.weight_decay),
        KVPO_FIELD(double, "ema_decay_rate", c.trainer.ema_decay),
        KVPO_FIELD(int, "ppo_epochs", c.trainer.ppo_epochs),
        KVPO_FIELD(int, "max_train_steps", c.trainer.max_iterations),
        KVPO_FIELD(int, "reward_segments", c.trainer.reward.segment_count),
        KVPO_FIELD(std::vector<double>, "reward_target", c.trainer.reward.target),
        KVPO_FIELD(std::uint64_t, "seed", c.trainer.seed),
        KVPO_FIELD(std::uint64_t, "prompt_seed", c.trainer.prompt_seed),
        KVPO_FIELD(int, "threads", c.trainer.threads),
        KVPO_FIELD(std::string, "out_dir", c.out_dir),
        KVPO_FIELD(std::string, "metrics_file", c.metrics_file),
        KVPO_FIELD(int, "checkpoint_every", c.checkpoint_every),
        KVPO_FIELD(bool, "dump_trajectories", c.dump_trajectories),
    };
    f.push_back(Field{
        "reward_components",
        [](const RunConfig& c) {
          json arr = json::array();
          for (const auto& comp : c.trainer.reward.components) {
            arr.push_back({{"name", comp.name}, {"weight", comp.weight}});
          }
          return arr;
        },
        [](RunConfig& c, const json& j) {
          if (!j.is_array()) throw ConfigError("key 'reward_components': expected an array");
          std::vector<RewardComponent> comps;
          for (const auto& e : j) {
            if (!e.is_object() || !e.contains("name") || !e.contains("weight") || e.size() != 2) {
              throw ConfigError(
                  "key 'reward_components': entries must be {\"name\": ..., \"weight\": ...}");
            }
            comps.push_back({read<std::string>("reward_components", e["name"]),
                             read<double>("reward_components", e["weight"])});
          }
          c.trainer.reward.components = std::move(comps);
        }});
    return f;
  }();
  return table;
}

#undef KVPO_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("key '" + key + "': " + what);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::vector<std::size_t> local_windows(const TrainerConfig& config) {
  if (config.local_window == LocalWindowMode::random) return config.local_window_choices;
  return {config.local_size};
}

std::size_t routed_slots_for(const TrainerConfig& config, std::size_t window) {
  if (config.local_window == LocalWindowMode::fixed) return config.routed_slots;
  const std::size_t near = config.local_size - config.routed_slots;
  return window > near ? window - near : 0;
}

void validate(RunConfig& config) {
  TrainerConfig& t = config.trainer;
  require(t.latent_dim > 0, "latent_dim", "must be positive");
  require(t.hidden_dim > 0, "hidden_dim", "must be positive");
  require(t.frames_per_block >= 1, "frames_per_block", "must be >= 1");
  require(t.denoising_timesteps >= 1, "denoising_timesteps", "must be >= 1");
  require(t.sink_size >= 1, "sink_size", "must be >= 1");
  require(t.local_size >= 1, "local_size", "must be >= 1");
  require(t.num_blocks >= 1, "num_blocks", "must be >= 1");
  require(t.branch_number >= 2, "branch_number", "must be >= 2");
  require(t.perturbed_blocks >= 1, "perturbed_blocks", "must be >= 1");
  require(t.grad_carrying_steps >= 1 && t.grad_carrying_steps <= t.denoising_timesteps,
          "gradient_carrying_replay_steps", "must lie in [1, denoising_timesteps]");
  require(t.temperature > 0.0, "temperature", "must be positive");
  require(t.l2_sigma > 0.0, "l2_sigma", "must be positive");
  require(t.clip_low > 0.0 && t.clip_low < 1.0, "clip_range_low", "must lie in (0, 1)");
  require(t.clip_high > 0.0 && t.clip_high < 1.0, "clip_range_high", "must lie in (0, 1)");
  require(t.advantage_clip_max > 0.0, "advantage_clip_max", "must be positive");
  require(t.kl_weight >= 0.0 && std::isfinite(t.kl_weight), "kl_penalty_weight",
          "must be finite and >= 0");
  require(t.learning_rate > 0.0, "learning_rate", "must be positive");
  require(t.warmup_steps >= 0, "warmup_steps", "must be >= 0");
  require(t.max_grad_norm > 0.0, "max_gradient_norm", "must be positive");
  require(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
  require(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
  require(t.adam_epsilon > 0.0, "adam_epsilon", "must be positive");
  require(t.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(t.ema_decay >= 0.0 && t.ema_decay < 1.0, "ema_decay_rate", "must lie in [0, 1)");
  require(t.ppo_epochs >= 1, "ppo_epochs", "must be >= 1");
  require(t.max_iterations >= 0, "max_train_steps", "must be >= 0");
  require(t.threads >= 1, "threads", "must be >= 1");
  require(config.checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  require(!config.out_dir.empty(), "out_dir", "must not be empty");
  require(!config.metrics_file.empty(), "metrics_file", "must not be empty");

  if (t.local_window == LocalWindowMode::random) {
    require(!t.local_window_choices.empty(), "local_window_choices", "must not be empty");
  }
  require(t.routed_slots <= t.local_size, "routed_slots", "must not exceed local_size");
  const int last_pivot = std::min(t.perturb_search_range, t.num_blocks);
  for (std::size_t w : local_windows(t)) {
    const std::size_t routed = routed_slots_for(t, w);
    require(routed >= 1, "routed_slots",
            "local window " + std::to_string(w) + " leaves no routed slot");
    GeneratorConfig g = t.generator_config();
    g.local_size = w;
    require(min_pivot(g, routed) <= last_pivot, "perturb_search_range",
            "no feasible pivot block for local window " + std::to_string(w) +
                " (minimum pivot " + std::to_string(min_pivot(g, routed)) + ")");
  }

  if (t.reward.target.empty()) t.reward.target.assign(t.latent_dim, 0.5);
  require(t.reward.target.size() == t.latent_dim, "reward_target", "must have latent_dim entries");
  try {
    validate(t.reward);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("key 'reward_components': ") + e.what());
  }
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown configuration key '" + key + "'");
    f->set(c, value);
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_json(const RunConfig& config, int indent) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(config);
  return j.dump(indent);
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write configuration file '" + path.string() + "'");
  out << to_json(config) << '\n';
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown configuration key '" + key + "'");
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;  // bare string
  }
  f->set(config, value);
}

}  // namespace kvpo
