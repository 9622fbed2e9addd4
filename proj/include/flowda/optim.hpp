#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "flowda/error.hpp"

namespace flowda {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  ///< decoupled (AdamW)
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One AdamW update of theta in place. Rejects non-finite gradients before
/// touching any state.
template <class Real>
void optimizer_step(std::span<Real> theta, std::span<const double> gradient, AdamState& state, const AdamConfig& cfg) {
  if (gradient.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size())
    throw ShapeError("optimizer_step: parameter, gradient and moment sizes differ");
  for (std::size_t i = 0; i < gradient.size(); ++i)
    if (!std::isfinite(gradient[i])) throw NumericalError("optimizer_step: non-finite gradient at index " + std::to_string(i));
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = gradient[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    double p = static_cast<double>(theta[i]);
    if (cfg.weight_decay != 0.0) p -= cfg.lr * cfg.weight_decay * p;
    p -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    theta[i] = static_cast<Real>(p);
  }
}

}  // namespace flowda
