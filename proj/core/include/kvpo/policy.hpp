// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Surrogate branch policy and losses.
//
// Each branch g of a group gets an energy E(g): the trajectory velocity
// energy (TVE) of its cached rollout velocities replayed under the default
// context, or a latent-space l2 distance for the baseline surrogate. The
// policy over branches is Gibbs, pi(g) ∝ exp(-E(g)/tau), and is optimized
// with a clipped PPO objective plus a KL penalty towards a frozen reference.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kvpo/autodiff.hpp"
#include "kvpo/chr.hpp"
#include "kvpo/error.hpp"

namespace kvpo {

template <class S>
struct PolicyEval {
  std::vector<S> energies;
  std::vector<S> logits;  // -E / tau
  std::vector<S> log_probs;
  std::vector<S> probs;
  double tau = 1.0;

  std::size_t size() const { return energies.size(); }
};

/// Gibbs distribution over branches, normalized with log-sum-exp.
template <class S>
PolicyEval<S> gibbs(std::vector<S> energies, double tau) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  if (energies.empty()) throw DomainError("gibbs over an empty group");
  PolicyEval<S> e;
  e.tau = tau;
  e.energies = std::move(energies);
  for (const auto& en : e.energies) e.logits.push_back(-en / S(tau));
  const S lse = ad::log_sum_exp(std::span<const S>(e.logits));
  using std::exp;
  for (const auto& l : e.logits) {
    e.log_probs.push_back(l - lse);
    e.probs.push_back(exp(e.log_probs.back()));
  }
  return e;
}

PolicyEval<double> detach(const PolicyEval<ad::Var>& e);

/// log rho = (l_new - LSE(l_new)) - (l_old - LSE(l_old)).
template <class S>
std::vector<S> log_ratio(const PolicyEval<S>& current, const PolicyEval<double>& old) {
  if (current.size() != old.size()) throw ContractError("log_ratio: group size mismatch");
  std::vector<S> out;
  out.reserve(current.size());
  for (std::size_t g = 0; g < current.size(); ++g) {
    out.push_back(current.log_probs[g] - S(old.log_probs[g]));
  }
  return out;
}

struct Advantages {
  std::vector<double> values;  // clamped
  std::vector<double> raw;     // before clamping
  double mean_reward = 0.0;
  double std = 0.0;  // population standard deviation
  double clip_max = 0.0;
};

inline constexpr double kAdvantageEpsilon = 1e-8;

/// (r - mean) / (population std + eps), clamped to [-clip_max, clip_max].
Advantages advantages(std::span<const double> rewards, double clip_max,
                      double eps = kAdvantageEpsilon);

/// min(rho A, clip(rho, 1 - eps_low, 1 + eps_high) A) with rho = exp(log_rho).
/// This is the per-branch objective; the loss is its negated mean.
template <class S>
S ppo_term(const S& log_rho, double adv, double eps_low, double eps_high) {
  using std::exp;
  const S rho = exp(log_rho);
  const double r = ad::value(rho);
  const double clipped = std::clamp(r, 1.0 - eps_low, 1.0 + eps_high);
  if (clipped * adv < r * adv) return S(clipped * adv);
  return rho * S(adv);
}

template <class S>
S ppo_loss(std::span<const S> log_ratios, std::span<const double> adv, double eps_low,
           double eps_high) {
  if (log_ratios.size() != adv.size()) throw ContractError("ppo_loss: group size mismatch");
  if (!(eps_low > 0.0 && eps_low < 1.0 && eps_high > 0.0 && eps_high < 1.0)) {
    throw DomainError("clip ranges must lie in (0, 1)");
  }
  S total(0.0);
  for (std::size_t g = 0; g < adv.size(); ++g) {
    total = total + ppo_term(log_ratios[g], adv[g], eps_low, eps_high);
  }
  return -total / S(static_cast<double>(adv.size()));
}

/// sum_g pi(g) (log pi(g) - log pi_ref(g)), evaluated as
/// sum_g q_g (r_g log r_g - r_g + 1) with r = pi / q, q = pi_ref. Both sums
/// agree because pi and q are normalized; every term of the second is
/// non-negative, so rounding cannot push the total below zero.
template <class S>
S kl_penalty(const PolicyEval<S>& current, const PolicyEval<double>& ref) {
  if (current.size() != ref.size()) throw ContractError("kl_penalty: group size mismatch");
  using std::exp;
  using std::expm1;
  S total(0.0);
  for (std::size_t g = 0; g < current.size(); ++g) {
    const double p = ad::value(current.probs[g]);
    if (!std::isfinite(ref.log_probs[g]) && p > 0.0) {
      throw DomainError("reference policy assigns zero probability to branch " +
                        std::to_string(g));
    }
    const double q = std::exp(ref.log_probs[g]);
    if (p == 0.0) {
      total = total + S(q);
      continue;
    }
    const S d = current.log_probs[g] - S(ref.log_probs[g]);
    S term(0.0);
    if (std::abs(ad::value(d)) >= 0.5) {
      term = current.probs[g] * (d - S(1.0)) + S(q);
    } else {
      // q (d e^d - (e^d - 1)) ~ q d^2 / 2 near d = 0.
      term = S(q) * (d * exp(d) - expm1(d));
      if (ad::value(term) < 0.0) term = S(0.0);
    }
    total = total + term;
  }
  return total;
}

/// Unclipped policy-gradient objective sum_g pi_old(g) rho_g A_g, i.e. the
/// expectation of rho A under pi_old. Its gradient at pi_old = pi_theta is
/// what contrastive_grad_reference computes in closed form.
template <class S>
S pg_objective(const PolicyEval<S>& current, const PolicyEval<double>& old,
               std::span<const double> adv) {
  if (current.size() != old.size() || adv.size() != old.size()) {
    throw ContractError("pg_objective: group size mismatch");
  }
  using std::exp;
  const std::vector<S> lr = log_ratio(current, old);
  S total(0.0);
  for (std::size_t g = 0; g < adv.size(); ++g) {
    total = total + S(old.probs[g] * adv[g]) * exp(lr[g]);
  }
  return total;
}

/// True when no branch reward strictly exceeds the anchor reward.
bool guard(std::span<const double> branch_rewards, double anchor_reward);

enum class EnergyValueMode {
  all_steps,        // value sums every step, gradient only the carrying steps
  grad_steps_only,  // value and gradient over the carrying steps only
};

struct TveOptions {
  int grad_steps = 2;
  EnergyValueMode value_mode = EnergyValueMode::all_steps;
};

/// sum over replay tuples of (1/d) ||v(z, t_s, K_{<b}) - u_hat||_F^2. Steps
/// s > grad_steps enter with parameters detached.
template <class S>
S tve(const Generator& gen, std::span<const S> theta, const BranchTrajectory& branch,
      std::span<const KVCache> contexts, const TveOptions& options);

/// ||x0_g - x0_anchor||^2 / (2 sigma^2) over the window's final latents.
std::vector<double> l2_surrogate_energies(const RolloutGroup& group, double sigma = 1.0);

/// Differentiable l2 surrogate: the anchor's window blocks are regenerated
/// under `theta` from the shared noise and fixed anchor contexts. At the
/// rollout parameters this reproduces l2_surrogate_energies exactly.
template <class S>
std::vector<S> l2_energies(const Generator& gen, std::span<const S> theta,
                           const RolloutGroup& group, std::span<const KVCache> anchor_contexts,
                           double sigma);

struct ReplayContexts {
  std::vector<std::vector<KVCache>> branches;
  std::vector<KVCache> anchor;
};

ReplayContexts build_replay_contexts(const Generator& gen, const Params& params,
                                     const RolloutGroup& group, ReplayContextMode mode,
                                     int threads = 1);

enum class SurrogateKind { tve, l2 };

struct SurrogateOptions {
  SurrogateKind kind = SurrogateKind::tve;
  TveOptions tve;
  double l2_sigma = 1.0;
};

template <class S>
std::vector<S> surrogate_energies(const Generator& gen, std::span<const S> theta,
                                  const RolloutGroup& group, const ReplayContexts& contexts,
                                  const SurrogateOptions& options);

struct LossConfig {
  double tau = 1.0;
  double eps_low = 0.1;
  double eps_high = 0.2;
  double beta = 5.0;
  SurrogateOptions surrogate;
};

template <class S>
struct LossTerms {
  PolicyEval<S> current;
  std::vector<S> log_ratios;
  S ppo;
  S kl;
  S total;
};

/// energies -> Gibbs -> log ratios -> clipped PPO + beta KL.
template <class S>
LossTerms<S> compose_loss(std::vector<S> energies, const PolicyEval<double>& old,
                          const PolicyEval<double>& ref, const Advantages& adv,
                          const LossConfig& config) {
  LossTerms<S> t;
  t.current = gibbs(std::move(energies), config.tau);
  t.log_ratios = log_ratio(t.current, old);
  t.ppo = ppo_loss(std::span<const S>(t.log_ratios), adv.values, config.eps_low,
                   config.eps_high);
  t.kl = kl_penalty(t.current, ref);
  t.total = t.ppo + S(config.beta) * t.kl;
  return t;
}

struct LossBreakdown {
  double ppo = 0.0;
  double kl = 0.0;
  double total = 0.0;
  bool skipped = false;
  std::vector<double> per_branch_ratio;
  std::vector<double> energies;
};

struct LossAndGrad {
  LossBreakdown loss;
  GradVector grad;
};

/// Total loss and its reverse-mode gradient at `params`.
LossAndGrad total_loss(const Generator& gen, const Params& params, const RolloutGroup& group,
                       const ReplayContexts& contexts, const PolicyEval<double>& old,
                       const PolicyEval<double>& ref, const Advantages& adv,
                       const LossConfig& config);

/// Closed-form policy-gradient direction of the unclipped objective:
/// -(1/tau) sum_g pi(g) (A_g - mu_A) grad E(g), mu_A = sum_k pi(k) A_k.
/// `energy_grads[g]` is the gradient of branch g's energy.
GradVector contrastive_grad_reference(const PolicyEval<double>& current,
                                      std::span<const double> adv,
                                      std::span<const GradVector> energy_grads, double tau);

/// Same, computing each branch's TVE gradient by reverse mode first.
GradVector contrastive_grad_reference(const Generator& gen, const Params& params,
                                      const RolloutGroup& group, const ReplayContexts& contexts,
                                      const PolicyEval<double>& current, const Advantages& adv,
                                      double tau, const TveOptions& options);

}  // namespace kvpo
