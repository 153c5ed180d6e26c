#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fabir/errors.hpp"
#include "fabir/parameters.hpp"

namespace fabir {

/// Warmup-then-inverse-sqrt schedule scaled by `factor` (0.5 halves the
/// Transformer rate): factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
inline double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup, double factor = 0.5) {
  if (step == 0) throw ContractError("lr_schedule: step counts from 1");
  if (warmup == 0) throw ConfigError("lr_schedule: warmup must be positive");
  const double s = static_cast<double>(step);
  return factor / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(warmup), -1.5));
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::size_t step = 0;
  std::map<std::string, std::vector<T>> m;  // keyed by parameter name
  std::map<std::string, std::vector<T>> v;
};

/// One Adam update with bias correction over every trainable parameter.
/// Parameters that received no gradient are treated as having a zero gradient.
template <typename T>
void adam_step(const std::vector<Parameter<T>>& params, AdamState<T>& state, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.node()->grad) {
      if (!std::isfinite(static_cast<double>(g))) throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++state.step;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (const auto& p : params) {
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.size() != p.tensor.numel()) {
      if (!m.empty()) throw DimensionError("Adam moments for '" + p.name + "' have the wrong size");
      m.assign(p.tensor.numel(), T(0));
      v.assign(p.tensor.numel(), T(0));
    }
    if (!p.tensor.has_grad()) {
      // Zero gradient: moments decay, update uses the decayed moments.
      bool any = false;
      for (std::size_t i = 0; i < m.size() && !any; ++i) any = m[i] != T(0);
      if (!any) continue;
    }
    const std::vector<T> grad = p.tensor.grad();
    Tensor<T> target = p.tensor;  // shares storage with the model
    auto data = target.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
      const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps);
      data[i] = static_cast<T>(static_cast<double>(data[i]) - update);
    }
  }
}

}  // namespace fabir
