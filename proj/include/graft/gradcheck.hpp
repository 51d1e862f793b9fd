#pragma once

// Central-difference gradient verification against the tape engine.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "graft/ad.hpp"

namespace graft {

struct FdEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool ok = true;
};

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t skipped_frozen = 0;
  std::vector<FdEntry> failures;  // non-finite comparisons land here too
  FdEntry worst;

  bool passed() const { return failed == 0; }
};

// loss_fn(with_grad): evaluates the scalar loss from the current parameter
// values; when with_grad it must also run backward so grads are populated.
// Each trainable scalar is perturbed by ±h and the central difference is
// compared against the analytic gradient. Relative error denominator is
// max(|analytic|, |numeric|, 1e-8); absolute differences below 1e-9 (the
// central-difference noise floor for O(1) losses) count as zero error.
// Frozen tensors are reported as skipped.
FdReport fd_check(const std::function<double(bool with_grad)>& loss_fn,
                  std::span<const ad::ParamPtr> params, double h = 1e-5,
                  double tol = 1e-4);

}  // namespace graft
