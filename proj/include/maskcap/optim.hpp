#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "maskcap/errors.hpp"
#include "maskcap/tensor.hpp"

namespace maskcap {

// Decoupled-weight-decay Adam with a linear warmup over the first
// `warmup_frac` of the scheduled steps and a constant rate afterwards.
struct OptimizerState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double warmup_frac = 0.1;
  std::int64_t total_steps = 0;  // scheduled steps; 0 means no warmup ramp
  std::int64_t step = 0;

  // Moments, aligned one-to-one with the parameter list bound at setup.
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void bind(const std::vector<Parameter*>& params) {
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Parameter* p : params) {
      m.emplace_back(p->value.size(), 0.0);
      v.emplace_back(p->value.size(), 0.0);
    }
  }

  double effective_lr(std::int64_t at_step) const {
    if (total_steps <= 0) return lr;
    const auto warm = static_cast<std::int64_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
    if (warm <= 0 || at_step >= warm) return lr;
    return lr * static_cast<double>(at_step) / static_cast<double>(warm);
  }
};

// Global-norm gradient clip across all listed parameters. Returns the norm
// before clipping.
inline double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad) g *= scale;
  }
  return norm;
}

// One AdamW update over params[i] using params[i]->grad. Rejects non-finite
// gradients before touching any state.
inline void adamw_step(const std::vector<Parameter*>& params, OptimizerState& state) {
  if (state.m.empty() && state.v.empty()) state.bind(params);
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractViolation("adamw_step: state not bound to this parameter list");
  for (const Parameter* p : params)
    for (double g : p->grad)
      if (!std::isfinite(g))
        throw NumericError("adamw_step: non-finite gradient in parameter '" + p->name + "'");

  state.step += 1;
  const double lr_t = state.effective_lr(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    if (m.size() != p.value.size())
      throw ContractViolation("adamw_step: moment shape mismatch for '" + p.name + "'");
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= lr_t * (mhat / (std::sqrt(vhat) + state.eps));
      p.value[j] -= lr_t * state.weight_decay * p.value[j];
    }
  }
}

}  // namespace maskcap
