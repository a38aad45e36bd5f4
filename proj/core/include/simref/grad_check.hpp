#pragma once

#include <functional>
#include <string>

#include "simref/net_params.hpp"
#include "simref/tape.hpp"

namespace simref {

/// Builds the loss graph for one forward pass. Must be deterministic given
/// the current parameter values (it will be re-run under perturbations).
using LossBuilder = std::function<Value(Tape&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
};

/// Central finite differences against the tape's analytic gradients:
/// for every parameter entry, err = |analytic - central| /
/// max(|analytic|, |central|, 1e-8). Returns the maximum over all entries.
/// A non-finite loss anywhere aborts with a diagnostic.
GradCheckResult grad_check_full(const LossBuilder& build_loss, NetParams& params, double eps);

/// Convenience wrapper returning just the max relative error.
double grad_check(const LossBuilder& build_loss, NetParams& params, double eps);

}  // namespace simref
