// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/flowgen.hpp"

#include <cmath>
#include <random>
#include <string>

#include "kvpo/autodiff.hpp"
#include "kvpo/error.hpp"
#include "kvpo/seeds.hpp"

namespace kvpo {

namespace {

using ad::dot;

// rows x cols row-major weight block starting at `offset`, optional bias.
template <class S>
std::vector<S> affine(std::span<const S> theta, std::size_t offset, std::size_t rows,
                      std::size_t cols, std::span<const S> x,
                      std::optional<std::size_t> bias = std::nullopt) {
  std::vector<S> out;
  out.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    S y = dot(theta.subspan(offset + r * cols, cols), x);
    if (bias) y = y + theta[*bias + r];
    out.push_back(y);
  }
  return out;
}

template <class S>
void check_output(std::span<const S> out) {
  for (const auto& v : out) {
    if (!std::isfinite(ad::value(v))) throw NumericalError("non-finite velocity output");
  }
}

}  // namespace

std::size_t KVCache::occupied_local() const {
  std::size_t n = 0;
  for (const auto& slot : local) n += slot.has_value() ? 1 : 0;
  return n;
}

KVCache KVCache::empty(std::size_t sink_capacity, std::size_t local_capacity) {
  KVCache c;
  c.sink_capacity = sink_capacity;
  c.local.resize(local_capacity);
  return c;
}

std::vector<const KVEntry*> KVCache::entries() const {
  std::vector<const KVEntry*> out;
  for (const auto& e : sink) out.push_back(&e);
  for (const auto& slot : local) {
    if (slot) out.push_back(&*slot);
  }
  return out;
}

std::vector<int> KVCache::local_frame_indices() const {
  std::vector<int> out;
  for (const auto& slot : local) {
    if (slot) out.push_back(slot->frame_index);
  }
  return out;
}

const Latent& FrameHistory::frame(int frame_index) const {
  if (frame_index < 1 || frame_index > size()) {
    throw ContractError("frame " + std::to_string(frame_index) + " missing from history");
  }
  return frames[frame_index - 1];
}

const KVEntry& FrameHistory::entry(int frame_index) const {
  if (frame_index < 1 || frame_index > static_cast<int>(kv.size())) {
    throw ContractError("frame " + std::to_string(frame_index) +
                        " missing from history key/value store");
  }
  return kv[frame_index - 1];
}

VelocityNet::VelocityNet(NetShape shape) : shape_(shape) {
  if (shape.latent_dim == 0 || shape.hidden_dim == 0) {
    throw ConfigError("latent and hidden dimensions must be positive");
  }
  for (const auto& s : network_spec().segments) {
    const std::size_t off = layout_.append(s.name, s.rows * s.cols);
    if (s.name == "embed.weight") embed_w_ = off;
    if (s.name == "embed.bias") embed_b_ = off;
    if (s.name == "attn.query") query_ = off;
    if (s.name == "attn.key") key_ = off;
    if (s.name == "attn.value") value_ = off;
    if (s.name == "head.hidden.weight") hidden_w_ = off;
    if (s.name == "head.hidden.bias") hidden_b_ = off;
    if (s.name == "head.out.weight") out_w_ = off;
    if (s.name == "head.out.bias") out_b_ = off;
  }
}

NetworkSpec VelocityNet::network_spec() const {
  const std::size_t d = shape_.latent_dim;
  const std::size_t h = shape_.hidden_dim;
  const std::size_t in = d + 1 + shape_.prompt_dim;
  const double bias_std = 0.1;
  auto w = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  return NetworkSpec{{
      {"embed.weight", h, in, w(in)},
      {"embed.bias", h, 1, bias_std},
      {"attn.query", h, h, w(h)},
      {"attn.key", h, h, w(h)},
      {"attn.value", h, h, w(h)},
      {"head.hidden.weight", h, h, w(h)},
      {"head.hidden.bias", h, 1, bias_std},
      {"head.out.weight", d, h, w(h)},
      {"head.out.bias", d, 1, bias_std},
  }};
}

Params VelocityNet::init(std::uint64_t seed) const { return param_init(network_spec(), seed); }

template <class S>
std::vector<S> VelocityNet::embed(std::span<const S> theta, std::span<const S> frame,
                                  double t, std::span<const double> prompt) const {
  const std::size_t d = shape_.latent_dim;
  const std::size_t h = shape_.hidden_dim;
  std::vector<S> input(frame.begin(), frame.end());
  input.emplace_back(t);
  input.insert(input.end(), prompt.begin(), prompt.end());
  std::vector<S> e = affine<S>(theta, embed_w_, h, d + 1 + shape_.prompt_dim, input, embed_b_);
  using std::tanh;
  for (auto& v : e) v = tanh(v);
  return e;
}

std::vector<double> slot_encoding(std::size_t slot, std::size_t dim) {
  std::vector<double> p(dim);
  for (std::size_t c = 0; c < dim; ++c) {
    const double freq = std::pow(kSlotBase, -static_cast<double>(c / 2 * 2) /
                                                static_cast<double>(dim));
    const double angle = static_cast<double>(slot) * freq;
    p[c] = kSlotScale * (c % 2 == 0 ? std::sin(angle) : std::cos(angle));
  }
  return p;
}

template <class S>
std::vector<S> attend(std::span<const S> query, const std::vector<std::vector<S>>& keys,
                      const std::vector<std::vector<S>>& values) {
  if (keys.empty()) throw DomainError("attention over an empty key set");
  if (keys.size() != values.size()) throw ContractError("attention: key/value count mismatch");
  const double scale = std::sqrt(static_cast<double>(query.size()));
  std::vector<S> scores;
  scores.reserve(keys.size());
  for (const auto& k : keys) {
    if (k.size() != query.size()) throw ContractError("attention: key dimension mismatch");
    scores.push_back(dot(query, std::span<const S>(k)) / S(scale));
  }
  const S lse = ad::log_sum_exp(std::span<const S>(scores));
  using std::exp;
  std::vector<S> weights;
  weights.reserve(scores.size());
  for (const auto& s : scores) weights.push_back(exp(s - lse));

  const std::size_t dv = values.front().size();
  std::vector<S> out;
  out.reserve(dv);
  std::vector<S> column(values.size());
  for (std::size_t i = 0; i < dv; ++i) {
    for (std::size_t j = 0; j < values.size(); ++j) column[j] = values[j][i];
    out.push_back(dot(std::span<const S>(weights), std::span<const S>(column)));
  }
  return out;
}

template <class S>
std::vector<S> VelocityNet::velocity(std::span<const S> theta, std::span<const S> x,
                                     double t, std::span<const double> prompt,
                                     const KVCache& cache) const {
  const std::size_t d = shape_.latent_dim;
  const std::size_t h = shape_.hidden_dim;
  if (theta.size() != layout_.size()) throw ContractError("parameter vector length mismatch");
  if (prompt.size() != shape_.prompt_dim) throw ContractError("prompt dimension mismatch");
  if (x.empty() || x.size() % d != 0) throw ContractError("latent block shape mismatch");
  const std::size_t frames = x.size() / d;

  std::vector<std::vector<S>> emb, queries, keys, values;
  for (const KVEntry* e : cache.entries()) {
    if (e->key.size() != h || e->value.size() != h) {
      throw ContractError("cache entry dimension mismatch");
    }
    std::vector<double> k = e->key;
    const auto pos = slot_encoding(keys.size(), h);
    for (std::size_t i = 0; i < h; ++i) k[i] += pos[i];
    keys.push_back(ad::lift<S>(k));
    values.push_back(ad::lift<S>(e->value));
  }
  for (std::size_t f = 0; f < frames; ++f) {
    emb.push_back(embed<S>(theta, x.subspan(f * d, d), t, prompt));
    const std::span<const S> ef(emb.back());
    queries.push_back(affine<S>(theta, query_, h, h, ef));
    std::vector<S> k = affine<S>(theta, key_, h, h, ef);
    const auto pos = slot_encoding(keys.size(), h);
    for (std::size_t i = 0; i < h; ++i) k[i] = k[i] + S(pos[i]);
    keys.push_back(std::move(k));
    values.push_back(affine<S>(theta, value_, h, h, ef));
  }

  using std::tanh;
  std::vector<S> out;
  out.reserve(x.size());
  for (std::size_t f = 0; f < frames; ++f) {
    const std::vector<S> a = attend<S>(std::span<const S>(queries[f]), keys, values);
    std::vector<S> r(h);
    for (std::size_t i = 0; i < h; ++i) r[i] = emb[f][i] + a[i];
    std::vector<S> hid = affine<S>(theta, hidden_w_, h, h, std::span<const S>(r), hidden_b_);
    for (auto& v : hid) v = tanh(v);
    const std::vector<S> v = affine<S>(theta, out_w_, d, h, std::span<const S>(hid), out_b_);
    out.insert(out.end(), v.begin(), v.end());
  }
  check_output<S>(out);
  return out;
}

KVEntry VelocityNet::frame_kv(std::span<const double> theta, std::span<const double> frame,
                              int frame_index, std::span<const double> prompt) const {
  if (frame.size() != shape_.latent_dim) throw ContractError("frame dimension mismatch");
  const std::size_t h = shape_.hidden_dim;
  const std::vector<double> e = embed<double>(theta, frame, 1.0, prompt);
  KVEntry kv;
  kv.key = affine<double>(theta, key_, h, h, e);
  kv.value = affine<double>(theta, value_, h, h, e);
  kv.frame_index = frame_index;
  return kv;
}

template std::vector<double> VelocityNet::velocity<double>(std::span<const double>,
                                                           std::span<const double>, double,
                                                           std::span<const double>,
                                                           const KVCache&) const;
template std::vector<ad::Var> VelocityNet::velocity<ad::Var>(std::span<const ad::Var>,
                                                             std::span<const ad::Var>, double,
                                                             std::span<const double>,
                                                             const KVCache&) const;
template std::vector<double> attend<double>(std::span<const double>,
                                            const std::vector<std::vector<double>>&,
                                            const std::vector<std::vector<double>>&);
template std::vector<ad::Var> attend<ad::Var>(std::span<const ad::Var>,
                                              const std::vector<std::vector<ad::Var>>&,
                                              const std::vector<std::vector<ad::Var>>&);

std::vector<double> interpolate(std::span<const double> x0, std::span<const double> xT,
                                double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("interpolation time outside [0, 1]");
  if (x0.size() != xT.size()) throw ContractError("interpolate: shape mismatch");
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t * x0[i] + (1.0 - t) * xT[i];
  return out;
}

std::vector<double> true_velocity(std::span<const double> x0, std::span<const double> xT) {
  if (x0.size() != xT.size()) throw ContractError("true_velocity: shape mismatch");
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x0[i] - xT[i];
  return out;
}

std::vector<double> attention(std::span<const double> query, const KVCache& cache,
                              std::span<const KVEntry> current_kv) {
  std::vector<std::vector<double>> keys, values;
  for (const KVEntry* e : cache.entries()) {
    keys.push_back(e->key);
    values.push_back(e->value);
  }
  for (const auto& e : current_kv) {
    keys.push_back(e.key);
    values.push_back(e.value);
  }
  return attend<double>(query, keys, values);
}

FlowState ode_step(const FlowState& state, std::span<const double> v, double dt) {
  if (!(dt > 0.0)) throw DomainError("ODE step size must be positive");
  if (state.t + dt > 1.0 + 1e-12) {
    throw SequencingError("ODE step beyond t = 1 (t = " + std::to_string(state.t) + ")");
  }
  if (v.size() != state.x.size()) throw ContractError("ode_step: velocity shape mismatch");
  FlowState next = state;
  for (std::size_t i = 0; i < next.x.size(); ++i) next.x[i] = state.x[i] + dt * v[i];
  next.t = state.t + dt;
  next.step_index = state.step_index + 1;
  return next;
}

std::vector<double> gaussian_noise(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

Generator::Generator(GeneratorConfig config, std::vector<double> prompt)
    : config_(config), net_(config.shape), prompt_(std::move(prompt)) {
  if (config_.frames_per_block < 1) throw ConfigError("frames_per_block must be >= 1");
  if (config_.grid.steps < 1) throw ConfigError("denoising_timesteps must be >= 1");
  if (config_.local_size < 1) throw ConfigError("local_size must be >= 1");
  if (prompt_.size() != config_.shape.prompt_dim) {
    throw ConfigError("prompt vector has " + std::to_string(prompt_.size()) +
                      " entries, expected " + std::to_string(config_.shape.prompt_dim));
  }
}

KVCache Generator::empty_cache() const {
  return KVCache::empty(config_.sink_size, config_.local_size);
}

void Generator::check_cache(const KVCache& cache, int block_index) const {
  const int frames = config_.frames_per_block * (block_index - 1);
  if (block_index < 1 || cache.frames_seen != frames) {
    throw ContractError("cache holds " + std::to_string(cache.frames_seen) +
                        " frames but block " + std::to_string(block_index) + " expects " +
                        std::to_string(frames));
  }
  const auto sink_expected =
      std::min<std::size_t>(cache.sink_capacity, static_cast<std::size_t>(frames));
  if (cache.sink.size() != sink_expected) throw ContractError("cache sink layout mismatch");
  const std::size_t after_sink = static_cast<std::size_t>(frames) - sink_expected;
  const std::size_t occupied = cache.occupied_local();
  if (cache.layout == LayoutTag::default_layout &&
      occupied != std::min(cache.local_capacity(), after_sink)) {
    throw ContractError("default cache local window mismatch");
  }
  if (cache.layout == LayoutTag::routed && occupied != cache.local_capacity()) {
    throw ContractError("routed cache must have every local slot occupied");
  }
}

BlockResult Generator::generate_block(const Params& params, const KVCache& cache,
                                      std::uint64_t noise_seed, int block_index,
                                      bool record_replay) const {
  check_cache(cache, block_index);
  const std::size_t d = config_.shape.latent_dim;
  const TimeGrid& grid = config_.grid;

  FlowState state;
  state.x = gaussian_noise(noise_seed, frame_values());
  state.t = grid.t(1);
  state.step_index = 1;

  BlockResult result;
  for (int s = 1; s <= grid.steps; ++s) {
    std::vector<double> v = net_.velocity<double>(params.values, state.x, grid.t(s), prompt_,
                                                  cache);
    if (record_replay) {
      result.replay.push_back({state.x, v, block_index, s, grid.t(s)});
    }
    state = ode_step(state, v, grid.dt());
    state.t = grid.t(s) + grid.dt();
  }

  result.block.block_index = block_index;
  const int first = config_.frames_per_block * (block_index - 1) + 1;
  for (int f = 0; f < config_.frames_per_block; ++f) {
    Latent l;
    l.values.assign(state.x.begin() + static_cast<std::ptrdiff_t>(f * d),
                    state.x.begin() + static_cast<std::ptrdiff_t>((f + 1) * d));
    l.frame_index = first + f;
    result.block.frames.push_back(std::move(l));
  }
  return result;
}

KVCache Generator::write_back(const KVCache& cache, const Block& block,
                              const Params& params) const {
  if (cache.layout != LayoutTag::default_layout) {
    throw ContractError("write_back expects a default-layout cache");
  }
  KVCache next = cache;
  for (const auto& frame : block.frames) {
    KVEntry kv = net_.frame_kv(params.values, frame.values, frame.frame_index, prompt_);
    if (next.sink.size() < next.sink_capacity) {
      next.sink.push_back(std::move(kv));
    } else {
      const std::size_t occ = next.occupied_local();
      if (occ < next.local.size()) {
        next.local[occ] = std::move(kv);
      } else {
        for (std::size_t i = 0; i + 1 < next.local.size(); ++i) {
          next.local[i] = std::move(next.local[i + 1]);
        }
        next.local.back() = std::move(kv);
      }
    }
    ++next.frames_seen;
  }
  return next;
}

void Generator::append_history(FrameHistory& history, const Block& block,
                               const Params& params) const {
  for (const auto& frame : block.frames) {
    if (frame.frame_index != history.size() + 1) {
      throw ContractError("history append out of order");
    }
    history.kv.push_back(net_.frame_kv(params.values, frame.values, frame.frame_index, prompt_));
    history.frames.push_back(frame);
  }
}

Trajectory Generator::rollout(const Params& params, int num_blocks, std::uint64_t noise_master,
                              bool record_replay) const {
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  Trajectory traj;
  KVCache cache = empty_cache();
  for (int b = 1; b <= num_blocks; ++b) {
    const auto seed = derive_seed(noise_master, SeedStream::block_noise,
                                  static_cast<std::uint64_t>(b));
    BlockResult r = generate_block(params, cache, seed, b, record_replay);
    cache = write_back(cache, r.block, params);
    append_history(traj.history, r.block, params);
    traj.replay.insert(traj.replay.end(), r.replay.begin(), r.replay.end());
    traj.blocks.push_back(std::move(r.block));
  }
  return traj;
}

KVCache Generator::default_cache(const FrameHistory& history, int frames) const {
  if (frames < 0 || frames > static_cast<int>(history.kv.size())) {
    throw ContractError("history shorter than requested cache length");
  }
  KVCache c = empty_cache();
  c.frames_seen = frames;
  const int sink = std::min(static_cast<int>(c.sink_capacity), frames);
  for (int i = 1; i <= sink; ++i) c.sink.push_back(history.entry(i));
  const int window = std::min(static_cast<int>(c.local_capacity()), frames - sink);
  for (int j = 0; j < window; ++j) {
    c.local[static_cast<std::size_t>(j)] = history.entry(frames - window + 1 + j);
  }
  return c;
}

FrameHistory Generator::rekey(const FrameHistory& history, const Params& params,
                              int upto) const {
  if (upto > history.size()) throw ContractError("rekey beyond history length");
  FrameHistory out;
  out.frames.assign(history.frames.begin(), history.frames.begin() + upto);
  out.kv.reserve(static_cast<std::size_t>(upto));
  for (const auto& f : out.frames) {
    out.kv.push_back(net_.frame_kv(params.values, f.values, f.frame_index, prompt_));
  }
  return out;
}

}  // namespace kvpo
