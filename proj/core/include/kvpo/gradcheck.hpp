// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Gradient fidelity checks against central finite differences and the
// closed-form contrastive gradient.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kvpo/config.hpp"

namespace kvpo {

struct GradcheckOptions {
  int instances = 20;           // TVE and total-loss instances
  int identity_instances = 100;  // closed-form identity instances
  double fd_step = 1e-5;
  double fd_tolerance = 1e-4;
  double identity_tolerance = 1e-6;
  std::uint64_t seed = 0;
  /// Applied to every reverse-mode gradient before comparison. Test-only
  /// fault injection; leave empty in normal use.
  std::function<void(GradVector&)> backward_fault;
};

struct CheckResult {
  std::string name;
  int instances = 0;
  double max_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return instances > 0 && max_error <= tolerance; }
};

struct GradcheckReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  std::string summary() const;
};

/// Random problem instances share the model shape and cache geometry of
/// `config`; each instance draws fresh parameters and a fresh group.
CheckResult check_tve_gradient(const TrainerConfig& config, const GradcheckOptions& options);
CheckResult check_total_loss_gradient(const TrainerConfig& config,
                                      const GradcheckOptions& options);
/// G = 8 synthetic smooth energies, tau cycling over {0.5, 1, 2}.
CheckResult check_contrastive_identity(const GradcheckOptions& options);

GradcheckReport run_gradcheck(const TrainerConfig& config, const GradcheckOptions& options);

}  // namespace kvpo
