#pragma once

// Helpers shared by the unit tests. The finite-difference oracle here is
// written independently of the library's grad_check module.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "divopt/nn.hpp"
#include "divopt/rng.hpp"

namespace testsupport {

inline std::vector<double> random_probs(divopt::Xoshiro256pp& rng, std::size_t k, double spread = 2.0) {
  std::vector<double> p(k);
  double sum = 0.0;
  for (double& v : p) sum += v = std::exp(spread * rng.normal());
  for (double& v : p) v /= sum;
  return p;
}

inline divopt::Tensor2D random_probs_batch(divopt::Xoshiro256pp& rng, std::size_t n, std::size_t k) {
  divopt::Tensor2D t(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    const auto p = random_probs(rng, k);
    std::copy(p.begin(), p.end(), t.row(r).begin());
  }
  return t;
}

inline divopt::Tensor2D random_matrix(divopt::Xoshiro256pp& rng, std::size_t n, std::size_t d,
                                      double scale = 1.0) {
  divopt::Tensor2D t(n, d);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline std::vector<double> flat_parameters(divopt::TwoHeadModel& model) {
  std::vector<double> out;
  for (auto block : divopt::parameter_blocks(model)) out.insert(out.end(), block.begin(), block.end());
  return out;
}

inline std::vector<double> flat_gradients(divopt::TwoHeadModel& model) {
  std::vector<double> out;
  for (auto block : divopt::gradient_blocks(model)) out.insert(out.end(), block.begin(), block.end());
  return out;
}

// Central differences over every parameter of `model` for a scalar function.
inline std::vector<double> central_differences(divopt::TwoHeadModel& model,
                                               const std::function<double(divopt::TwoHeadModel&)>& f,
                                               double h) {
  std::vector<double> out;
  for (auto block : divopt::parameter_blocks(model)) {
    for (double& theta : block) {
      const double saved = theta;
      theta = saved + h;
      const double up = f(model);
      theta = saved - h;
      const double down = f(model);
      theta = saved;
      out.push_back((up - down) / (2.0 * h));
    }
  }
  return out;
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace testsupport
