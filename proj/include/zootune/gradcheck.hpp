#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "zootune/errors.hpp"
#include "zootune/tensor.hpp"

// Central-difference gradient checking. Only meaningful in double precision;
// the loss callback must rebuild its graph from the current parameter values
// on every call, because entries are perturbed in place.

namespace zootune {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_param;
  std::size_t worst_entry = 0;
  bool pass = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Check every stride-th entry of each parameter (1 = all entries).
  std::size_t stride = 1;
  // Relative error denominator floor. Central differences carry absolute
  // noise of roughly eps*|loss|/step, so entries whose true gradient sits
  // below this floor are judged on absolute error (floor * tolerance)
  // instead of drowning in rounding noise.
  double denom_floor = 1e-3;
};

// params[i] is perturbed in place and restored; analytic() must return one
// gradient tensor per parameter, in the same order.
inline GradCheckReport finite_diff_check(
    const std::vector<std::pair<std::string, Tensor<double>*>>& params,
    const std::function<double()>& loss,
    const std::function<std::vector<Tensor<double>>()>& analytic,
    const GradCheckOptions& opt = {}) {
  if (opt.step < 1e-7 || opt.step > 1e-3) {
    throw ValueError("finite difference step must lie in [1e-7, 1e-3]");
  }
  if (opt.stride == 0) throw ValueError("stride must be positive");
  std::vector<Tensor<double>> grads = analytic();
  if (grads.size() != params.size()) {
    throw ValueError("analytic gradient count " + std::to_string(grads.size()) +
                     " does not match parameter count " +
                     std::to_string(params.size()));
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p].second;
    if (!grads[p].same_shape(t)) {
      throw ShapeError("gradient shape " + shape_str(grads[p].shape()) +
                       " does not match parameter " + params[p].first + " shape " +
                       shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < t.size(); i += opt.stride) {
      double orig = t[i];
      t[i] = orig + opt.step;
      double lp = loss();
      t[i] = orig - opt.step;
      double lm = loss();
      t[i] = orig;
      double numeric = (lp - lm) / (2.0 * opt.step);
      double a = grads[p][i];
      double denom =
          std::max(std::max(std::fabs(a), std::fabs(numeric)), opt.denom_floor);
      double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[p].first;
        report.worst_entry = i;
      }
      ++report.entries_checked;
    }
  }
  report.pass = report.max_rel_err <= opt.tolerance;
  return report;
}

}  // namespace zootune
