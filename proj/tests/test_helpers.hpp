#pragma once

// Shared oracles for the test suites. Everything here is deliberately
// independent of the library's computation paths: plain loops, no tapes.

#include <cmath>
#include <functional>
#include <vector>

#include "maskcap/rng.hpp"
#include "maskcap/tensor.hpp"

namespace testutil {

// Central finite differences of a scalar function of one parameter entry.
inline double central_diff(maskcap::Parameter& p, std::size_t index,
                           const std::function<double()>& f, double eps = 1e-5) {
  const double saved = p.value[index];
  p.value[index] = saved + eps;
  const double lp = f();
  p.value[index] = saved - eps;
  const double lm = f();
  p.value[index] = saved;
  return (lp - lm) / (2.0 * eps);
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max(std::max(std::abs(a), std::abs(b)), floor);
}

inline std::vector<double> random_values(maskcap::Rng& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Max relative error between the analytic gradient of `loss_fn` w.r.t. every
// entry of `p` and central finite differences. `loss_fn` must rebuild the
// computation from scratch on each call; `grad` holds the analytic result.
inline double max_grad_rel_err(maskcap::Parameter& p, const std::vector<double>& grad,
                               const std::function<double()>& loss_fn, double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double fd = central_diff(p, i, loss_fn, eps);
    worst = std::max(worst, rel_err(grad[i], fd));
  }
  return worst;
}

}  // namespace testutil
