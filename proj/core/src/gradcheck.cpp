// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/gradcheck.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>

#include "kvpo/seeds.hpp"

namespace kvpo {

bool GradcheckReport::passed() const {
  return !checks.empty() &&
         std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
}

std::string GradcheckReport::summary() const {
  std::ostringstream out;
  for (const auto& c : checks) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s instances=%-4d max_rel_err=%.3e tol=%.0e %s\n",
                  c.name.c_str(), c.instances, c.max_error, c.tolerance,
                  c.passed() ? "PASS" : "FAIL");
    out << line;
  }
  return out.str();
}

namespace {

struct Instance {
  Params params;
  RolloutGroup group;
  ReplayContexts contexts;
};

Instance make_instance(const Generator& gen, const TrainerConfig& config, std::uint64_t seed,
                       int i) {
  Instance inst;
  const auto s = derive_seed(seed, SeedStream::iteration, static_cast<std::uint64_t>(i));
  inst.params = param_init(gen.net().network_spec(), s);
  GroupSpec spec;
  spec.routed_slots = config.routed_slots;
  spec.pivot = min_pivot(gen.config(), spec.routed_slots);
  spec.window = 2;
  spec.num_blocks = spec.pivot + spec.window - 1;
  spec.branches = 4;
  spec.routing_mode = config.routing_mode;
  spec.seeds = GroupSeeds::derive(derive_seed(s, SeedStream::block_noise, 0),
                                  derive_seed(s, SeedStream::routing, 0), spec.branches);
  inst.group = rollout_group(gen, inst.params, spec);
  inst.contexts = build_replay_contexts(gen, inst.params, inst.group, config.replay_context);
  return inst;
}

Params jitter(const Params& p, std::uint64_t seed, double scale) {
  Params out = p;
  const auto noise = gaussian_noise(seed, p.size());
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] += scale * noise[k];
  return out;
}

Generator make_generator(const TrainerConfig& config) {
  return Generator(config.generator_config(), config.prompt());
}

}  // namespace

CheckResult check_tve_gradient(const TrainerConfig& config, const GradcheckOptions& options) {
  CheckResult r{"tve_gradient", 0, 0.0, options.fd_tolerance};
  const Generator gen = make_generator(config);
  for (int i = 0; i < options.instances; ++i) {
    const Instance inst = make_instance(gen, config, options.seed, i);
    const std::size_t g = static_cast<std::size_t>(i) % inst.group.branches.size();
    const BranchTrajectory& br = inst.group.branches[g];
    const std::span<const KVCache> ctx(inst.contexts.branches[g]);
    // Value and gradient over the same steps so differences see exactly
    // what reverse mode differentiates.
    const TveOptions opts{1 + i % config.denoising_timesteps, EnergyValueMode::grad_steps_only};
    GradVector ad = grad(inst.params, [&](std::span<const ad::Var> th) {
                      return tve<ad::Var>(gen, th, br, ctx, opts);
                    }).grad;
    if (options.backward_fault) options.backward_fault(ad);
    const GradVector fd = fd_grad(
        inst.params,
        [&](std::span<const double> th) { return tve<double>(gen, th, br, ctx, opts); },
        options.fd_step);
    r.max_error = std::max(r.max_error, relative_l2_error(ad.values, fd.values));
    ++r.instances;
  }
  return r;
}

CheckResult check_total_loss_gradient(const TrainerConfig& config,
                                      const GradcheckOptions& options) {
  CheckResult r{"total_loss_gradient", 0, 0.0, options.fd_tolerance};
  const Generator gen = make_generator(config);
  for (int i = 0; i < options.instances; ++i) {
    const Instance inst = make_instance(gen, config, options.seed, i);
    const auto s = derive_seed(options.seed, SeedStream::iteration, static_cast<std::uint64_t>(i));
    LossConfig lc = config.loss_config();
    lc.surrogate.tve.value_mode = EnergyValueMode::grad_steps_only;
    lc.surrogate.kind = i % 4 == 3 ? SurrogateKind::l2 : SurrogateKind::tve;

    // Distinct old and reference snapshots so ratios and KL are non-trivial.
    const Params old = jitter(inst.params, s ^ 0x01, 0.02);
    const Params ref = jitter(inst.params, s ^ 0x02, 0.05);
    const auto old_ctx = build_replay_contexts(gen, old, inst.group, config.replay_context);
    const auto ref_ctx = build_replay_contexts(gen, ref, inst.group, config.replay_context);
    const auto old_eval =
        gibbs(surrogate_energies<double>(gen, old.values, inst.group, old_ctx, lc.surrogate),
              lc.tau);
    const auto ref_eval =
        gibbs(surrogate_energies<double>(gen, ref.values, inst.group, ref_ctx, lc.surrogate),
              lc.tau);
    const std::vector<double> rewards = gaussian_noise(s ^ 0x03, inst.group.branches.size());
    const Advantages adv = advantages(rewards, config.advantage_clip_max);

    LossAndGrad lg =
        total_loss(gen, inst.params, inst.group, inst.contexts, old_eval, ref_eval, adv, lc);
    if (options.backward_fault) options.backward_fault(lg.grad);
    const GradVector fd = fd_grad(
        inst.params,
        [&](std::span<const double> th) {
          auto e = surrogate_energies<double>(gen, th, inst.group, inst.contexts, lc.surrogate);
          return compose_loss<double>(std::move(e), old_eval, ref_eval, adv, lc).total;
        },
        options.fd_step);
    r.max_error = std::max(r.max_error, relative_l2_error(lg.grad.values, fd.values));
    ++r.instances;
  }
  return r;
}

CheckResult check_contrastive_identity(const GradcheckOptions& options) {
  CheckResult r{"contrastive_identity", 0, 0.0, options.identity_tolerance};
  constexpr std::size_t kGroup = 8;
  constexpr std::size_t kDim = 16;
  constexpr double kTaus[] = {0.5, 1.0, 2.0};
  for (int i = 0; i < options.identity_instances; ++i) {
    const auto s = derive_seed(options.seed, SeedStream::iteration, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(s);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> offset(-3.0, 3.0);
    const double tau = kTaus[i % 3];

    // E_g(theta) = c_g + sum_j a_gj tanh(theta_j + b_gj)
    std::vector<double> c(kGroup), a(kGroup * kDim), b(kGroup * kDim);
    for (auto& x : c) x = offset(rng);
    for (auto& x : a) x = normal(rng);
    for (auto& x : b) x = normal(rng);
    ParamLayout layout;
    layout.append("theta", kDim);
    Params params{gaussian_noise(s ^ 0x11, kDim), layout};
    std::vector<double> rewards(kGroup);
    for (auto& x : rewards) x = normal(rng);
    const Advantages adv = advantages(rewards, 2.5);

    auto energy = [&](std::size_t g, auto th) {
      using S = typename decltype(th)::value_type;
      using std::tanh;
      S e(c[g]);
      for (std::size_t j = 0; j < kDim; ++j) {
        e = e + S(a[g * kDim + j]) * tanh(th[j] + S(b[g * kDim + j]));
      }
      return e;
    };

    std::vector<double> e0;
    std::vector<GradVector> energy_grads;
    for (std::size_t g = 0; g < kGroup; ++g) {
      const auto vg = grad(params, [&](std::span<const ad::Var> th) { return energy(g, th); });
      e0.push_back(vg.value);
      energy_grads.push_back(vg.grad);
    }
    const PolicyEval<double> current = gibbs(e0, tau);
    const GradVector reference =
        contrastive_grad_reference(current, adv.values, energy_grads, tau);

    GradVector ad = grad(params, [&](std::span<const ad::Var> th) {
                      std::vector<ad::Var> es;
                      for (std::size_t g = 0; g < kGroup; ++g) es.push_back(energy(g, th));
                      const auto eval = gibbs(std::move(es), tau);
                      return pg_objective(eval, current, adv.values);
                    }).grad;
    if (options.backward_fault) options.backward_fault(ad);
    r.max_error = std::max(r.max_error, relative_l2_error(ad.values, reference.values));
    ++r.instances;
  }
  return r;
}

GradcheckReport run_gradcheck(const TrainerConfig& config, const GradcheckOptions& options) {
  GradcheckReport report;
  report.checks.push_back(check_tve_gradient(config, options));
  report.checks.push_back(check_total_loss_gradient(config, options));
  report.checks.push_back(check_contrastive_identity(options));
  return report;
}

}  // namespace kvpo
