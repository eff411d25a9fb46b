// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Toy block-wise autoregressive flow-matching generator.
//
// Frames are d-dimensional latents produced F at a time. Each block is
// generated by Euler-integrating a learned velocity field from noise (t = 0)
// to data (t = 1). The velocity network attends over a key/value cache that
// holds one entry per past frame: a persistent sink (the first frames of the
// sequence) and a sliding local window of the most recent frames.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kvpo/params.hpp"

namespace kvpo {

struct NetShape {
  std::size_t latent_dim = 8;  // d
  std::size_t hidden_dim = 16;  // h == d_k == d_v
  std::size_t prompt_dim = 4;

  bool operator==(const NetShape&) const = default;
};

/// Uniform grid on [0, 1): t_s = (s - 1) / S for s = 1..S.
struct TimeGrid {
  int steps = 4;

  double dt() const { return 1.0 / steps; }
  double t(int step) const { return (step - 1) * dt(); }
};

struct Latent {
  std::vector<double> values;
  int frame_index = 0;

  bool operator==(const Latent&) const = default;
};

struct Block {
  std::vector<Latent> frames;
  int block_index = 0;

  bool operator==(const Block&) const = default;
};

struct KVEntry {
  std::vector<double> key;
  std::vector<double> value;
  int frame_index = 0;

  bool operator==(const KVEntry&) const = default;
};

enum class LayoutTag { default_layout, routed };

/// Sink + local key/value memory. Occupied local slots are packed at the
/// front in attention order.
struct KVCache {
  std::vector<KVEntry> sink;
  std::vector<std::optional<KVEntry>> local;
  LayoutTag layout = LayoutTag::default_layout;
  int frames_seen = 0;
  std::size_t sink_capacity = 3;

  static KVCache empty(std::size_t sink_capacity, std::size_t local_capacity);

  std::size_t local_capacity() const { return local.size(); }
  std::size_t occupied_local() const;
  /// Sink entries followed by occupied local slots, in attention order.
  std::vector<const KVEntry*> entries() const;
  std::vector<int> local_frame_indices() const;

  bool operator==(const KVCache&) const = default;
};

/// All frames generated so far and their key/value entries, indexed by
/// frame number (1-based). Retained beyond the local window because routing
/// addresses frames that have already been evicted.
struct FrameHistory {
  std::vector<Latent> frames;
  std::vector<KVEntry> kv;

  int size() const { return static_cast<int>(frames.size()); }
  const Latent& frame(int frame_index) const;
  const KVEntry& entry(int frame_index) const;

  bool operator==(const FrameHistory&) const = default;
};

/// Pre-step latent and produced velocity of one Euler step of one block.
struct ReplayTuple {
  std::vector<double> z;
  std::vector<double> u_hat;
  int block = 0;
  int step = 0;
  double t = 0.0;

  bool operator==(const ReplayTuple&) const = default;
};

struct FlowState {
  std::vector<double> x;  // frames_per_block * d, frame-major
  double t = 0.0;
  int step_index = 1;
};

/// Velocity network: per-frame embedding, single-head attention over
/// [sink; local; current block], residual two-layer head.
///
///   e = tanh(W_e [x; t; prompt] + b_e)
///   q, k, v = W_q e, W_k e, W_v e
///   k_j <- k_j + p(j), p the fixed sinusoid of attention slot j
///   a = softmax(q K^T / sqrt(h)) V
///   out = W_o tanh(W_1 (e + a) + b_1) + b_o
class VelocityNet {
 public:
  explicit VelocityNet(NetShape shape);

  const NetShape& shape() const { return shape_; }
  const ParamLayout& layout() const { return layout_; }

  /// Segment shapes and init scales: weights ~ N(0, 1/fan_in), biases
  /// ~ N(0, 0.1^2).
  NetworkSpec network_spec() const;
  Params init(std::uint64_t seed) const;

  /// Velocity for every frame of `x` (frame-major, length F * d). Cache
  /// keys and values enter as constants.
  template <class S>
  std::vector<S> velocity(std::span<const S> theta, std::span<const S> x, double t,
                          std::span<const double> prompt, const KVCache& cache) const;

  /// Cache entry of a finished frame, embedded at t = 1.
  KVEntry frame_kv(std::span<const double> theta, std::span<const double> frame,
                   int frame_index, std::span<const double> prompt) const;

 private:
  template <class S>
  std::vector<S> embed(std::span<const S> theta, std::span<const S> frame, double t,
                       std::span<const double> prompt) const;

  NetShape shape_;
  ParamLayout layout_;
  std::size_t embed_w_, embed_b_, query_, key_, value_, hidden_w_, hidden_b_, out_w_,
      out_b_;
};

/// x_t = t x0 + (1 - t) xT.
std::vector<double> interpolate(std::span<const double> x0, std::span<const double> xT,
                                double t);
/// u = x0 - xT.
std::vector<double> true_velocity(std::span<const double> x0, std::span<const double> xT);

inline constexpr double kSlotBase = 100.0;
inline constexpr double kSlotScale = 0.5;

/// Parameter-free sinusoid for attention slot `slot` (0-based over
/// [sink; local; current]), scaled by kSlotScale. Makes attention depend on
/// cache order, so routed layouts are not permutation invariant.
std::vector<double> slot_encoding(std::size_t slot, std::size_t dim);

/// softmax(q K^T / sqrt(d_k)) V over [sink; local(occupied); current].
std::vector<double> attention(std::span<const double> query, const KVCache& cache,
                              std::span<const KVEntry> current_kv);

/// Scalar-generic attention kernel shared by the network.
template <class S>
std::vector<S> attend(std::span<const S> query, const std::vector<std::vector<S>>& keys,
                      const std::vector<std::vector<S>>& values);

/// Explicit Euler step. Throws SequencingError past t = 1.
FlowState ode_step(const FlowState& state, std::span<const double> v, double dt);

/// Standard-normal draws from one seeded mt19937_64 stream.
std::vector<double> gaussian_noise(std::uint64_t seed, std::size_t count);

struct GeneratorConfig {
  NetShape shape;
  int frames_per_block = 3;
  TimeGrid grid;
  std::size_t sink_size = 3;
  std::size_t local_size = 9;
};

struct BlockResult {
  Block block;
  std::vector<ReplayTuple> replay;
};

struct Trajectory {
  std::vector<Block> blocks;
  FrameHistory history;
  std::vector<ReplayTuple> replay;
};

/// Block generator with a fixed prompt vector.
class Generator {
 public:
  Generator(GeneratorConfig config, std::vector<double> prompt);

  const GeneratorConfig& config() const { return config_; }
  const VelocityNet& net() const { return net_; }
  std::span<const double> prompt() const { return prompt_; }
  std::size_t frame_values() const {
    return config_.frames_per_block * config_.shape.latent_dim;
  }

  KVCache empty_cache() const;

  /// Solves the block ODE from seeded noise under a fixed cache. Throws
  /// ContractError when the cache does not describe the history preceding
  /// `block_index`.
  BlockResult generate_block(const Params& params, const KVCache& cache,
                             std::uint64_t noise_seed, int block_index,
                             bool record_replay) const;

  /// Adds the block's frames to the cache in default layout: the sink fills
  /// first, then local slots shift and evict the oldest frame.
  KVCache write_back(const KVCache& cache, const Block& block, const Params& params) const;

  /// Appends a block's frames and their entries to a history store.
  void append_history(FrameHistory& history, const Block& block, const Params& params) const;

  /// Sequential generation with default write-back. Block b uses noise seed
  /// derive_seed(noise_master, block_noise, b).
  Trajectory rollout(const Params& params, int num_blocks, std::uint64_t noise_master,
                     bool record_replay = false) const;

  /// Default-layout cache for the first `frames` frames of a history.
  KVCache default_cache(const FrameHistory& history, int frames) const;

  /// History with entries recomputed under `params` for frames 1..upto.
  FrameHistory rekey(const FrameHistory& history, const Params& params, int upto) const;

 private:
  void check_cache(const KVCache& cache, int block_index) const;

  GeneratorConfig config_;
  VelocityNet net_;
  std::vector<double> prompt_;
};

}  // namespace kvpo
