#pragma once

// Central-difference gradient checking against analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "leanconv/autograd.hpp"
#include "leanconv/layers.hpp"
#include "leanconv/network.hpp"

namespace leanconv {

struct GradCheckEntry {
  std::string name;
  std::size_t size = 0;
  double analytic_norm = 0;
  double numeric_norm = 0;
  double rel_error = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0;
  double scale_floor = 0;
  double max_rel_error = 0;
  bool passed = true;
};

/// Compares each ParamRef's grad buffer with central differences of f,
/// perturbing the value buffer in place (and restoring it). The error is
/// norm-wise per parameter tensor, |g - g_fd| / max(|g|, |g_fd|, floor); the
/// floor keeps gradients that vanish by symmetry (normalization invariances)
/// from being judged on difference noise alone. Never throws on mismatch;
/// the report carries pass/fail.
inline GradCheckReport grad_check(const std::function<double()>& f,
                                  std::span<const ParamRef> params, double step = 1e-5,
                                  double tolerance = 1e-5, double scale_floor = 1e-5) {
  GradCheckReport report;
  report.tolerance = tolerance;
  report.scale_floor = scale_floor;
  for (const auto& p : params) {
    GradCheckEntry e;
    e.name = p.name;
    e.size = p.value.size();
    double diff = 0, an = 0, nn = 0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + step;
      const double up = f();
      p.value[k] = saved - step;
      const double down = f();
      p.value[k] = saved;
      const double fd = (up - down) / (2 * step);
      diff += (fd - p.grad[k]) * (fd - p.grad[k]);
      an += p.grad[k] * p.grad[k];
      nn += fd * fd;
    }
    e.analytic_norm = std::sqrt(an);
    e.numeric_norm = std::sqrt(nn);
    const double scale = std::max({e.analytic_norm, e.numeric_norm, scale_floor});
    e.rel_error = scale > 0 ? std::sqrt(diff) / scale : std::sqrt(diff);
    e.passed = e.rel_error <= tolerance;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.passed = report.passed && e.passed;
    report.entries.push_back(std::move(e));
  }
  return report;
}

/// Checks a plain function of a vector given its analytic gradient.
inline GradCheckReport grad_check(
    const std::function<double(std::span<const double>)>& f,
    const std::function<std::vector<double>(std::span<const double>)>& grad,
    std::vector<double> x, double step = 1e-5, double tolerance = 1e-5,
    double scale_floor = 0.0) {
  auto g = grad(x);
  detail::check_dim("grad_check", "gradient length", x.size(), g.size());
  const ParamRef ref{"x", x, g};
  return grad_check([&] { return f(x); }, std::span<const ParamRef>(&ref, 1), step, tolerance,
                    scale_floor);
}

/// Mean cross entropy of the network on (x, labels), with parameter
/// gradients written into the grad buffers (zeroed first). Optionally
/// returns the input cotangent.
inline double loss_and_gradients(Network& net, const Tensor& x, std::span<const int> labels,
                                 Mode mode = Mode::train, Tensor* dx = nullptr) {
  net.zero_grad();
  GradTape tape;
  const auto logits = net.forward(x, mode, &tape);
  auto res = softmax_cross_entropy(logits, labels);
  auto g = tape.backward(res.dlogits);
  if (dx) *dx = std::move(g);
  return res.loss;
}

inline double network_loss(Network& net, const Tensor& x, std::span<const int> labels,
                           Mode mode = Mode::train) {
  return softmax_cross_entropy(net.forward(x, mode), labels).loss;
}

/// Small network used for whole-network gradient checks: channel plan 4-8,
/// one step per block, 4 input channels so the input is (2, 4, 8, 8).
inline NetworkSpec grad_check_spec(StepKind kind, double h = 0.5) {
  NetworkSpec s;
  s.channel_plan = {4, 8};
  s.steps_per_block = 1;
  s.step_kind = kind;
  s.input_channels = 4;
  s.num_classes = 3;
  s.h = h;
  return s;
}

/// Moves a freshly built network away from its symmetric starting point so
/// every parameter has a generic gradient: random classifier, random
/// normalization scale and shift.
inline void randomize_for_grad_check(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> scale(0.5, 1.5), shift(-0.5, 0.5);
  for (auto* bn : net.norms()) {
    for (auto& g : bn->gamma()) g = scale(rng);
    for (auto& b : bn->beta()) b = shift(rng);
  }
  for (const auto& p : net.params())
    if (p.name.starts_with("classifier")) {
      for (auto& v : p.value) v = normal(rng);
    }
}

/// Full-network check for one step kind: random input of shape (2, 4, 8, 8),
/// train-mode cross entropy, every parameter tensor and the input compared
/// against central differences.
inline GradCheckReport network_grad_check(StepKind kind, std::uint64_t seed = 7,
                                          double step = 1e-5, double tolerance = 1e-5) {
  Network net(grad_check_spec(kind), seed);
  randomize_for_grad_check(net, seed + 1);
  Rng rng(seed + 2);
  std::normal_distribution<double> normal;
  Tensor x(Shape4{2, 4, 8, 8});
  for (auto& v : x.data()) v = normal(rng);
  const std::vector<int> labels{0, 2};

  Tensor dx;
  loss_and_gradients(net, x, labels, Mode::train, &dx);
  auto params = net.params();
  params.push_back({"input", x.data(), dx.data()});
  return grad_check([&] { return network_loss(net, x, labels); }, params, step, tolerance);
}

}  // namespace leanconv
