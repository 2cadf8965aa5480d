#pragma once

// Adam with bias correction and a step-decay learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "leanconv/autograd.hpp"
#include "leanconv/error.hpp"

namespace leanconv {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;

  void resize_for(std::span<const ParamRef> params) {
    if (m.size() == params.size()) return;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.value.size(), 0.0);
      v.emplace_back(p.value.size(), 0.0);
    }
    t = 0;
  }
};

/// One bias-corrected Adam update of every parameter from its grad buffer.
inline void adam_step(std::span<const ParamRef> params, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  state.resize_for(params);
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    detail::check_dim("adam_step", "moment length", state.m[i].size(), p.value.size());
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g;
      p.value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

/// lr0 * decay^floor(epoch / every), epochs counted from 0.
inline double step_decay_lr(double lr0, double decay, std::size_t every, std::size_t epoch) {
  if (every == 0) throw Error("step_decay_lr: decay interval must be positive");
  return lr0 * std::pow(decay, static_cast<double>(epoch / every));
}

}  // namespace leanconv
