#include "divopt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "divopt/errors.hpp"

namespace divopt {

std::vector<double> analytic_gradient(TwoHeadModel& model, const Objective& objective) {
  zero_gradients(model);
  objective(model, true);
  std::vector<double> flat;
  flat.reserve(parameter_count(model));
  for (auto block : gradient_blocks(model)) flat.insert(flat.end(), block.begin(), block.end());
  zero_gradients(model);
  return flat;
}

std::vector<double> numeric_gradient(TwoHeadModel& model, const Objective& objective, double h) {
  std::vector<double> flat;
  flat.reserve(parameter_count(model));
  for (auto block : parameter_blocks(model)) {
    for (double& theta : block) {
      const double saved = theta;
      theta = saved + h;
      const double up = objective(model, false);
      theta = saved - h;
      const double down = objective(model, false);
      theta = saved;
      flat.push_back((up - down) / (2.0 * h));
    }
  }
  return flat;
}

GradCheckReport compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                  double tol, double floor) {
  if (analytic.size() != numeric.size()) throw DimensionError("gradient vectors differ in length");
  GradCheckReport report;
  report.parameters_checked = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double err = std::abs(analytic[i] - numeric[i]) / denom;
    if (!(err <= report.max_relative_error)) {
      report.max_relative_error = err;
      report.worst_index = i;
    }
  }
  report.passed = report.max_relative_error < tol;
  return report;
}

GradCheckReport grad_check(TwoHeadModel& model, const Objective& objective, double h, double tol) {
  if (!(h > 0.0 && h <= 1e-3)) throw ConfigError("finite-difference step must lie in (0, 1e-3]");
  const auto analytic = analytic_gradient(model, objective);
  const auto numeric = numeric_gradient(model, objective, h);
  return compare_gradients(analytic, numeric, tol);
}

}  // namespace divopt
