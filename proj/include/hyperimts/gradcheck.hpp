#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hyperimts/model.hpp"

namespace hyperimts {

struct GradCheckResult {
  bool pass = false;
  double worst_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;

  std::string summary() const;
};

/// Compares analytic gradients against central finite differences for every
/// entry of every named parameter. loss_fn must rebuild the forward pass and
/// return the scalar loss tensor; the finite-difference side only ever reads
/// its value, so it is independent of the backward path it is checking.
/// Relative error per entry: |a - f| / max(|a|, |f|, denom_floor). Entries
/// that fail at the base step are re-estimated at smaller steps before being
/// flagged, which filters out steps that straddle a relu kink.
GradCheckResult check_gradients(
    const std::vector<std::pair<std::string, Tensor>>& params,
    const std::function<Tensor()>& loss_fn, double tolerance,
    double step = 1e-5, double denom_floor = 1e-6);

/// The standard small instance for full-model checks: 3 variables, 6
/// distinct timestamps, 10 nodes (7 lookback + 3 queries), with aligned and
/// unaligned observation pairs.
SplitSample gradcheck_instance();

/// Runs check_gradients over the full model loss (masked MSE over the
/// instance's queries) for the given config.
GradCheckResult check_model_gradients(const ModelConfig& config, double tolerance,
                                      double step = 1e-5);

}  // namespace hyperimts
