#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "divopt/nn.hpp"

namespace divopt {

/// A scalar objective over a model and fixed batch(es). When `accumulate` is
/// true it must also add dObjective/dtheta into the model's gradient buffers.
using Objective = std::function<double(TwoHeadModel& model, bool accumulate)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t parameters_checked = 0;
  bool passed = false;
};

/// Flat analytic gradient (serialization order). Leaves the model's gradient
/// buffers zeroed.
std::vector<double> analytic_gradient(TwoHeadModel& model, const Objective& objective);

/// Flat central-difference gradient with step `h`.
std::vector<double> numeric_gradient(TwoHeadModel& model, const Objective& objective, double h);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps entries
/// whose true gradient is zero from dividing finite-difference noise by zero.
GradCheckReport compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                  double tol, double floor = 1e-6);

/// Analytic vs central-difference check over every parameter.
/// Requires h in (0, 1e-3].
GradCheckReport grad_check(TwoHeadModel& model, const Objective& objective, double h, double tol);

}  // namespace divopt
