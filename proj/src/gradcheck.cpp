#include "graft/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace graft {

FdReport fd_check(const std::function<double(bool)>& loss_fn,
                  std::span<const ad::ParamPtr> params, double h, double tol) {
  if (h <= 0.0) throw std::invalid_argument("fd_check: h must be positive");
  FdReport report;
  double worst_diff = -1.0;

  for (const auto& p : params) p->zero_grad();
  loss_fn(true);

  // Snapshot analytic grads before perturbation runs overwrite anything.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    if (!p.trainable) {
      report.skipped_frozen += p.size();
      continue;
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double orig = p.values[k];
      p.values[k] = orig + h;
      double fp = loss_fn(false);
      p.values[k] = orig - h;
      double fm = loss_fn(false);
      p.values[k] = orig;

      FdEntry e;
      e.param = p.id;
      e.index = k;
      e.analytic = analytic[pi][k];
      e.numeric = (fp - fm) / (2.0 * h);
      double diff = std::abs(e.analytic - e.numeric);
      double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-8});
      // below the central-difference noise floor both sides are effectively
      // zero; the ratio against the 1e-8 denominator floor is meaningless
      e.rel_err = diff <= 1e-9 ? 0.0 : diff / denom;
      e.ok = std::isfinite(e.rel_err) && e.rel_err < tol;

      ++report.checked;
      if (std::isfinite(e.rel_err) &&
          (e.rel_err > report.max_rel_err ||
           (e.rel_err == report.max_rel_err && diff > worst_diff))) {
        report.max_rel_err = e.rel_err;
        worst_diff = diff;
        report.worst = e;
      }
      if (!e.ok) {
        if (!std::isfinite(e.rel_err)) report.max_rel_err = std::numeric_limits<double>::infinity();
        ++report.failed;
        if (report.failures.size() < 32) report.failures.push_back(e);
      }
    }
  }
  return report;
}

}  // namespace graft
