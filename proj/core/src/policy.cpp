// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/policy.hpp"


#include "kvpo/parallel.hpp"
#include "kvpo/seeds.hpp"

namespace kvpo {

PolicyEval<double> detach(const PolicyEval<ad::Var>& e) {
  PolicyEval<double> out;
  out.tau = e.tau;
  out.energies = ad::values_of(std::span<const ad::Var>(e.energies));
  out.logits = ad::values_of(std::span<const ad::Var>(e.logits));
  out.log_probs = ad::values_of(std::span<const ad::Var>(e.log_probs));
  out.probs = ad::values_of(std::span<const ad::Var>(e.probs));
  return out;
}

Advantages advantages(std::span<const double> rewards, double clip_max, double eps) {
  if (rewards.size() < 2) throw DomainError("advantages need at least two branches");
  const double n = static_cast<double>(rewards.size());
  // Deviations are taken from the first reward so that equal rewards give
  // exact zeros rather than rounding noise amplified by 1 / eps.
  const double base = rewards.front();
  double shift = 0.0;
  for (double r : rewards) shift += r - base;
  shift /= n;
  Advantages a;
  a.clip_max = clip_max;
  a.mean_reward = base + shift;
  double var = 0.0;
  for (double r : rewards) var += (r - base - shift) * (r - base - shift);
  a.std = std::sqrt(var / n);
  for (double r : rewards) {
    const double v = (r - base - shift) / (a.std + eps);
    a.raw.push_back(v);
    a.values.push_back(std::clamp(v, -clip_max, clip_max));
  }
  return a;
}

bool guard(std::span<const double> branch_rewards, double anchor_reward) {
  for (double r : branch_rewards) {
    if (r > anchor_reward) return false;
  }
  return true;
}

template <class S>
S tve(const Generator& gen, std::span<const S> theta, const BranchTrajectory& branch,
      std::span<const KVCache> contexts, const TveOptions& options) {
  const auto& net = gen.net();
  const double inv_d = 1.0 / static_cast<double>(gen.config().shape.latent_dim);
  std::vector<double> detached;
  if constexpr (ad::is_taped_v<S>) detached = ad::values_of(theta);

  S energy(0.0);
  for (const auto& tup : branch.replay) {
    const bool carries_grad = tup.step <= options.grad_steps;
    if (!carries_grad && options.value_mode == EnergyValueMode::grad_steps_only) continue;
    const auto idx = static_cast<std::size_t>(tup.block - branch.pivot);
    if (idx >= contexts.size()) throw ContractError("replay tuple outside context window");
    if (tup.z.size() != tup.u_hat.size()) throw ContractError("replay tuple shape mismatch");

    S residual(0.0);
    if (ad::is_taped_v<S> && !carries_grad) {
      const auto v = net.velocity<double>(detached, tup.z, tup.t, gen.prompt(), contexts[idx]);
      std::vector<double> diff(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) diff[i] = v[i] - tup.u_hat[i];
      residual = S(ad::dot(std::span<const double>(diff), std::span<const double>(diff)));
    } else {
      const std::vector<S> z = ad::lift<S>(tup.z);
      const auto v = net.velocity<S>(theta, z, tup.t, gen.prompt(), contexts[idx]);
      std::vector<S> diff(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) diff[i] = v[i] - S(tup.u_hat[i]);
      residual = ad::dot(std::span<const S>(diff), std::span<const S>(diff));
    }
    energy = energy + residual * S(inv_d);
  }
  return energy;
}

template double tve<double>(const Generator&, std::span<const double>, const BranchTrajectory&,
                            std::span<const KVCache>, const TveOptions&);
template ad::Var tve<ad::Var>(const Generator&, std::span<const ad::Var>,
                              const BranchTrajectory&, std::span<const KVCache>,
                              const TveOptions&);

std::vector<double> l2_surrogate_energies(const RolloutGroup& group, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("l2 surrogate scale must be positive");
  const auto anchor = group.anchor.window_frames();
  std::vector<double> out;
  for (const auto& br : group.branches) {
    const auto frames = br.window_frames();
    if (frames.size() != anchor.size()) throw ContractError("branch window differs from anchor");
    double sq = 0.0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (std::size_t i = 0; i < frames[f]->values.size(); ++i) {
        const double diff = frames[f]->values[i] - anchor[f]->values[i];
        sq += diff * diff;
      }
    }
    out.push_back(sq / (2.0 * sigma * sigma));
  }
  return out;
}

template <class S>
std::vector<S> l2_energies(const Generator& gen, std::span<const S> theta,
                           const RolloutGroup& group, std::span<const KVCache> anchor_contexts,
                           double sigma) {
  if (!(sigma > 0.0)) throw DomainError("l2 surrogate scale must be positive");
  const auto& grid = gen.config().grid;
  const std::size_t d = gen.config().shape.latent_dim;
  if (anchor_contexts.size() != static_cast<std::size_t>(group.window)) {
    throw ContractError("need one anchor context per window block");
  }

  // Regenerate the anchor's window blocks under theta.
  std::vector<std::vector<S>> regenerated;
  for (int w = 0; w < group.window; ++w) {
    const int b = group.pivot + w;
    const auto seed =
        derive_seed(group.seeds.noise_master, SeedStream::block_noise, static_cast<std::uint64_t>(b));
    std::vector<S> x = ad::lift<S>(gaussian_noise(seed, gen.frame_values()));
    for (int s = 1; s <= grid.steps; ++s) {
      const auto v = gen.net().velocity<S>(theta, x, grid.t(s), gen.prompt(),
                                           anchor_contexts[static_cast<std::size_t>(w)]);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + S(grid.dt()) * v[i];
    }
    regenerated.push_back(std::move(x));
  }

  const double scale = 1.0 / (2.0 * sigma * sigma);
  std::vector<S> out;
  for (const auto& br : group.branches) {
    const auto frames = br.window_frames();
    if (frames.size() * d != regenerated.size() * gen.frame_values()) {
      throw ContractError("branch window differs from anchor");
    }
    S sq(0.0);
    std::size_t f = 0;
    for (const auto& block : regenerated) {
      for (std::size_t j = 0; j < block.size(); j += d, ++f) {
        for (std::size_t i = 0; i < d; ++i) {
          const S diff = S(frames[f]->values[i]) - block[j + i];
          sq = sq + diff * diff;
        }
      }
    }
    out.push_back(sq * S(scale));
  }
  return out;
}

template std::vector<double> l2_energies<double>(const Generator&, std::span<const double>,
                                                 const RolloutGroup&, std::span<const KVCache>,
                                                 double);
template std::vector<ad::Var> l2_energies<ad::Var>(const Generator&, std::span<const ad::Var>,
                                                   const RolloutGroup&,
                                                   std::span<const KVCache>, double);

ReplayContexts build_replay_contexts(const Generator& gen, const Params& params,
                                     const RolloutGroup& group, ReplayContextMode mode,
                                     int threads) {
  ReplayContexts ctx;
  ctx.branches.resize(group.branches.size());
  parallel_for(group.branches.size() + 1, threads, [&](std::size_t i) {
    if (i == 0) {
      ctx.anchor = replay_contexts(gen, params, group, group.anchor,
                                   ReplayContextMode::own_history);
    } else {
      ctx.branches[i - 1] = replay_contexts(gen, params, group, group.branches[i - 1], mode);
    }
  });
  return ctx;
}

template <class S>
std::vector<S> surrogate_energies(const Generator& gen, std::span<const S> theta,
                                  const RolloutGroup& group, const ReplayContexts& contexts,
                                  const SurrogateOptions& options) {
  if (options.kind == SurrogateKind::l2) {
    return l2_energies<S>(gen, theta, group, contexts.anchor, options.l2_sigma);
  }
  std::vector<S> out;
  out.reserve(group.branches.size());
  for (std::size_t g = 0; g < group.branches.size(); ++g) {
    out.push_back(tve<S>(gen, theta, group.branches[g], contexts.branches[g], options.tve));
  }
  return out;
}

template std::vector<double> surrogate_energies<double>(const Generator&, std::span<const double>,
                                                        const RolloutGroup&,
                                                        const ReplayContexts&,
                                                        const SurrogateOptions&);
template std::vector<ad::Var> surrogate_energies<ad::Var>(const Generator&,
                                                          std::span<const ad::Var>,
                                                          const RolloutGroup&,
                                                          const ReplayContexts&,
                                                          const SurrogateOptions&);

LossAndGrad total_loss(const Generator& gen, const Params& params, const RolloutGroup& group,
                       const ReplayContexts& contexts, const PolicyEval<double>& old,
                       const PolicyEval<double>& ref, const Advantages& adv,
                       const LossConfig& config) {
  LossAndGrad out;
  ValueAndGrad vg = grad(params, [&](std::span<const ad::Var> theta) {
    auto energies = surrogate_energies<ad::Var>(gen, theta, group, contexts, config.surrogate);
    LossTerms<ad::Var> t = compose_loss(std::move(energies), old, ref, adv, config);
    out.loss.ppo = t.ppo.value();
    out.loss.kl = t.kl.value();
    out.loss.energies = ad::values_of(std::span<const ad::Var>(t.current.energies));
    for (const auto& lr : t.log_ratios) out.loss.per_branch_ratio.push_back(std::exp(lr.value()));
    return t.total;
  });
  out.loss.total = vg.value;
  out.grad = std::move(vg.grad);
  return out;
}

GradVector contrastive_grad_reference(const PolicyEval<double>& current,
                                      std::span<const double> adv,
                                      std::span<const GradVector> energy_grads, double tau) {
  const std::size_t G = current.size();
  if (adv.size() != G || energy_grads.size() != G) {
    throw ContractError("contrastive_grad_reference: group size mismatch");
  }
  double mu = 0.0;
  for (std::size_t k = 0; k < G; ++k) mu += current.probs[k] * adv[k];
  GradVector out;
  out.values.assign(energy_grads.front().size(), 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    const double w = -current.probs[g] * (adv[g] - mu) / tau;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] += w * energy_grads[g].values[i];
    }
  }
  return out;
}

GradVector contrastive_grad_reference(const Generator& gen, const Params& params,
                                      const RolloutGroup& group, const ReplayContexts& contexts,
                                      const PolicyEval<double>& current, const Advantages& adv,
                                      double tau, const TveOptions& options) {
  std::vector<GradVector> grads;
  for (std::size_t g = 0; g < group.branches.size(); ++g) {
    grads.push_back(grad(params, [&](std::span<const ad::Var> theta) {
                      return tve<ad::Var>(gen, theta, group.branches[g], contexts.branches[g],
                                          options);
                    }).grad);
  }
  return contrastive_grad_reference(current, adv.values, grads, tau);
}

}  // namespace kvpo
