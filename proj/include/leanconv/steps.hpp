#pragma once

// The residual step family and the architectural glue around it. Every class
// is a Layer: forward records a cache on the tape when one is attached, and
// backward turns an output cotangent into an input cotangent while adding
// into the parameter gradients.
//
//   resnet       y = x + K2^T relu(N(K1 x))                 (full stencil grids)
//   linearmix    same, K = depth-wise + 1x1
//   mobilenet    y = relu(N2(M relu(N1(K_dw x))))           (not residual)
//   rd_explicit  y = x + h(-K^T K x + relu(N(M x)))         (K depth-wise)
//   rd_circulant same with K block-circulant
//   rd_implicit  y = (I + h K^T K)^{-1} (x + h relu(N(M x)))

#include <algorithm>
#include <any>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "leanconv/autograd.hpp"
#include "leanconv/conv_ops.hpp"
#include "leanconv/layers.hpp"
#include "leanconv/operators.hpp"
#include "leanconv/spectral.hpp"

namespace leanconv {

enum class StepKind { resnet, mobilenet, linearmix, rd_explicit, rd_implicit, rd_circulant };

inline constexpr StepKind kAllStepKinds[] = {StepKind::resnet,      StepKind::mobilenet,
                                             StepKind::linearmix,   StepKind::rd_explicit,
                                             StepKind::rd_implicit, StepKind::rd_circulant};

inline std::string_view to_string(StepKind k) {
  switch (k) {
    case StepKind::resnet: return "resnet";
    case StepKind::mobilenet: return "mobilenet";
    case StepKind::linearmix: return "linearmix";
    case StepKind::rd_explicit: return "rd_explicit";
    case StepKind::rd_implicit: return "rd_implicit";
    case StepKind::rd_circulant: return "rd_circulant";
  }
  return "?";
}

inline StepKind parse_step_kind(std::string_view s) {
  for (auto k : kAllStepKinds)
    if (to_string(k) == s) return k;
  throw Error("unknown step kind '" + std::string(s) +
              "' (expected resnet, mobilenet, linearmix, rd_explicit, rd_implicit or rd_circulant)");
}

using Rng = std::mt19937_64;

/// Zero-mean normal draws with standard deviation sqrt(2 / fan_in).
inline void init_he(std::span<double> w, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w) v = dist(rng);
}

/// Layers whose weights are drawn at construction time by the network builder.
class InitializableLayer : public Layer {
 public:
  virtual void initialize(Rng& rng) = 0;
  virtual std::vector<BatchNorm*> norms() { return {}; }
};

namespace detail {

inline void check_step(const char* where, std::size_t expected, const Shape4& s) {
  check_dim(where, "channels", expected, s.c);
}

inline void check_step_size(const char* where, double h) {
  if (!(h >= 0.0) || !std::isfinite(h))
    throw Error(std::string(where) + ": step size must be finite and non-negative");
}

template <class T>
const T& cache_as(const std::any& cache, const char* where) {
  const T* p = std::any_cast<T>(&cache);
  if (!p) throw Error(std::string(where) + ": backward called without a recorded forward state");
  return *p;
}

inline std::vector<ParamRef> join(std::vector<ParamRef> a, std::vector<ParamRef> b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Opening layer: fully coupled 5x5 conv, batchnorm, ReLU

class OpeningLayer : public InitializableLayer {
 public:
  OpeningLayer(std::size_t c_in, std::size_t c_out, std::size_t m = 5)
      : grid_(m, c_out, c_in), dgrid_(m, c_out, c_in), bn_(c_out) {}

  std::string_view kind() const override { return "opening"; }
  StencilGrid<double>& grid() noexcept { return grid_; }
  BatchNorm& norm() noexcept { return bn_; }

  void initialize(Rng& rng) override {
    const auto m = grid_.stencil_size();
    init_he(grid_.weights(), grid_.in_channels() * m * m, rng);
  }
  std::vector<BatchNorm*> norms() override { return {&bn_}; }
  std::vector<ParamRef> params() override {
    return detail::join({{qualified("conv"), grid_.weights(), dgrid_.weights()}},
                        bn_.params(qualified("norm")));
  }
  Shape4 output_shape(const Shape4& in) const override {
    return {in.n, grid_.out_channels(), in.h, in.w};
  }

  Tensor forward(const Tensor& x, Context& ctx) override {
    detail::check_step("OpeningLayer", grid_.in_channels(), x.shape());
    Cache c;
    auto z = apply_fully_coupled(grid_, x);
    c.pre = bn_.forward(z, ctx.mode, ctx.recording() ? &c.bn : nullptr);
    auto y = relu(c.pre);
    if (ctx.recording()) {
      c.x = x;
      ctx.tape->record(*this, std::move(c));
    }
    return y;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "OpeningLayer");
    const auto dz = bn_.backward(c.bn, relu_backward(c.pre, dy));
    fully_coupled_grad_accumulate(dz, c.x, dgrid_);
    return apply_fully_coupled_transpose(grid_, dz);
  }

 private:
  struct Cache {
    Tensor x, pre;
    BatchNorm::Cache bn;
  };
  StencilGrid<double> grid_, dgrid_;
  BatchNorm bn_;
};

// ---------------------------------------------------------------------------
// ResNet step with fully coupled grids

class ResNetStep : public InitializableLayer {
 public:
  ResNetStep(std::size_t c, std::size_t m)
      : k1_(m, c, c), k2_(m, c, c), dk1_(m, c, c), dk2_(m, c, c), bn_(c) {}

  std::string_view kind() const override { return "resnet"; }
  StencilGrid<double>& inner() noexcept { return k1_; }
  StencilGrid<double>& outer() noexcept { return k2_; }
  BatchNorm& norm() noexcept { return bn_; }

  void initialize(Rng& rng) override {
    const auto m = k1_.stencil_size(), c = k1_.in_channels();
    init_he(k1_.weights(), c * m * m, rng);
    init_he(k2_.weights(), c * m * m, rng);
  }
  std::vector<BatchNorm*> norms() override { return {&bn_}; }
  std::vector<ParamRef> params() override {
    return detail::join({{qualified("theta1"), k1_.weights(), dk1_.weights()},
                         {qualified("theta2"), k2_.weights(), dk2_.weights()}},
                        bn_.params(qualified("norm")));
  }

  Tensor forward(const Tensor& x, Context& ctx) override {
    detail::check_step("ResNetStep", k1_.in_channels(), x.shape());
    Cache c;
    c.pre = bn_.forward(apply_fully_coupled(k1_, x), ctx.mode,
                        ctx.recording() ? &c.bn : nullptr);
    c.act = relu(c.pre);
    auto y = x + apply_fully_coupled_transpose(k2_, c.act);
    if (ctx.recording()) {
      c.x = x;
      ctx.tape->record(*this, std::move(c));
    }
    return y;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "ResNetStep");
    // <dy, K2^T a> = <K2 dy, a>
    fully_coupled_grad_accumulate(c.act, dy, dk2_);
    const auto dz = bn_.backward(c.bn, relu_backward(c.pre, apply_fully_coupled(k2_, dy)));
    fully_coupled_grad_accumulate(dz, c.x, dk1_);
    return dy + apply_fully_coupled_transpose(k1_, dz);
  }

 private:
  struct Cache {
    Tensor x, pre, act;
    BatchNorm::Cache bn;
  };
  StencilGrid<double> k1_, k2_, dk1_, dk2_;
  BatchNorm bn_;
};

// ---------------------------------------------------------------------------
// LinearMix step: ResNet step with depth-wise + 1x1 operators

class LinearMixStep : public InitializableLayer {
 public:
  LinearMixStep(std::size_t c, std::size_t m)
      : b1_(m, c), b2_(m, c), db1_(m, c), db2_(m, c),
        m1_(c, c), m2_(c, c), dm1_(c, c), dm2_(c, c), bn_(c) {}

  std::string_view kind() const override { return "linearmix"; }
  StencilBank<double>& inner_bank() noexcept { return b1_; }
  StencilBank<double>& outer_bank() noexcept { return b2_; }
  ChannelMatrix<double>& inner_matrix() noexcept { return m1_; }
  ChannelMatrix<double>& outer_matrix() noexcept { return m2_; }
  BatchNorm& norm() noexcept { return bn_; }

  void initialize(Rng& rng) override {
    const auto m = b1_.stencil_size(), c = b1_.count();
    init_he(b1_.weights(), m * m, rng);
    init_he(b2_.weights(), m * m, rng);
    init_he(m1_.weights(), c, rng);
    init_he(m2_.weights(), c, rng);
  }
  std::vector<BatchNorm*> norms() override { return {&bn_}; }
  std::vector<ParamRef> params() override {
    return detail::join({{qualified("theta1.depthwise"), b1_.weights(), db1_.weights()},
                         {qualified("theta1.mix"), m1_.weights(), dm1_.weights()},
                         {qualified("theta2.depthwise"), b2_.weights(), db2_.weights()},
                         {qualified("theta2.mix"), m2_.weights(), dm2_.weights()}},
                        bn_.params(qualified("norm")));
  }

  Tensor forward(const Tensor& x, Context& ctx) override {
    detail::check_step("LinearMixStep", b1_.count(), x.shape());
    Cache c;
    c.pre = bn_.forward(apply_linear_mix(b1_, m1_, x), ctx.mode,
                        ctx.recording() ? &c.bn : nullptr);
    c.act = relu(c.pre);
    auto y = x + apply_linear_mix_transpose(b2_, m2_, c.act);
    if (ctx.recording()) {
      c.x = x;
      ctx.tape->record(*this, std::move(c));
    }
    return y;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "LinearMixStep");
    depthwise_grad_accumulate(c.act, dy, db2_);
    one_by_one_grad_accumulate(c.act, dy, dm2_);
    const auto dz =
        bn_.backward(c.bn, relu_backward(c.pre, apply_linear_mix(b2_, m2_, dy)));
    depthwise_grad_accumulate(dz, c.x, db1_);
    one_by_one_grad_accumulate(dz, c.x, dm1_);
    return dy + apply_linear_mix_transpose(b1_, m1_, dz);
  }

 private:
  struct Cache {
    Tensor x, pre, act;
    BatchNorm::Cache bn;
  };
  StencilBank<double> b1_, b2_, db1_, db2_;
  ChannelMatrix<double> m1_, m2_, dm1_, dm2_;
  BatchNorm bn_;
};

// ---------------------------------------------------------------------------
// MobileNet-style step (two layers, no skip connection)

class MobileNetStep : public InitializableLayer {
 public:
  MobileNetStep(std::size_t c, std::size_t m)
      : bank_(m, c), dbank_(m, c), mix_(c, c), dmix_(c, c), bn1_(c), bn2_(c) {}

  std::string_view kind() const override { return "mobilenet"; }
  StencilBank<double>& bank() noexcept { return bank_; }
  ChannelMatrix<double>& matrix() noexcept { return mix_; }
  BatchNorm& norm1() noexcept { return bn1_; }
  BatchNorm& norm2() noexcept { return bn2_; }

  void initialize(Rng& rng) override {
    const auto m = bank_.stencil_size();
    init_he(bank_.weights(), m * m, rng);
    init_he(mix_.weights(), mix_.cols(), rng);
  }
  std::vector<BatchNorm*> norms() override { return {&bn1_, &bn2_}; }
  std::vector<ParamRef> params() override {
    auto p = detail::join({{qualified("theta1"), bank_.weights(), dbank_.weights()},
                           {qualified("theta2"), mix_.weights(), dmix_.weights()}},
                          bn1_.params(qualified("norm1")));
    return detail::join(std::move(p), bn2_.params(qualified("norm2")));
  }

  Tensor forward(const Tensor& x, Context& ctx) override {
    detail::check_step("MobileNetStep", bank_.count(), x.shape());
    Cache c;
    const bool rec = ctx.recording();
    c.pre1 = bn1_.forward(apply_depthwise(bank_, x), ctx.mode, rec ? &c.bn1 : nullptr);
    c.act1 = relu(c.pre1);
    c.pre2 = bn2_.forward(apply_one_by_one(mix_, c.act1), ctx.mode, rec ? &c.bn2 : nullptr);
    auto y = relu(c.pre2);
    if (rec) {
      c.x = x;
      ctx.tape->record(*this, std::move(c));
    }
    return y;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "MobileNetStep");
    const auto db = bn2_.backward(c.bn2, relu_backward(c.pre2, dy));
    one_by_one_grad_accumulate(db, c.act1, dmix_);
    const auto da = bn1_.backward(c.bn1, relu_backward(c.pre1, apply_one_by_one_transpose(mix_, db)));
    depthwise_grad_accumulate(da, c.x, dbank_);
    return apply_depthwise_transpose(bank_, da);
  }

 private:
  struct Cache {
    Tensor x, pre1, act1, pre2;
    BatchNorm::Cache bn1, bn2;
  };
  StencilBank<double> bank_, dbank_;
  ChannelMatrix<double> mix_, dmix_;
  BatchNorm bn1_, bn2_;
};

// ---------------------------------------------------------------------------
// Reaction-diffusion steps

/// Shared parts of the three RD variants: one stencil bank (diffusion),
/// one channel matrix (reaction), one batchnorm, and the step size h.
class ReactionDiffusionBase : public InitializableLayer {
 public:
  ReactionDiffusionBase(std::size_t c, std::size_t m, double h)
      : bank_(m, c), dbank_(m, c), mix_(c, c), dmix_(c, c), bn_(c), h_(h) {
    detail::check_step_size("ReactionDiffusionStep", h);
  }

  StencilBank<double>& bank() noexcept { return bank_; }
  ChannelMatrix<double>& matrix() noexcept { return mix_; }
  BatchNorm& norm() noexcept { return bn_; }
  double step_size() const noexcept { return h_; }
  void set_step_size(double h) {
    detail::check_step_size("ReactionDiffusionStep", h);
    h_ = h;
  }

  void initialize(Rng& rng) override {
    const auto m = bank_.stencil_size();
    init_he(bank_.weights(), fan_in(m), rng);
    init_he(mix_.weights(), mix_.cols(), rng);
  }
  std::vector<BatchNorm*> norms() override { return {&bn_}; }
  std::vector<ParamRef> params() override {
    return detail::join({{qualified("theta1"), bank_.weights(), dbank_.weights()},
                         {qualified("theta2"), mix_.weights(), dmix_.weights()}},
                        bn_.params(qualified("norm")));
  }

 protected:
  struct Reaction {
    Tensor pre;
    BatchNorm::Cache bn;
  };

  virtual std::size_t fan_in(std::size_t m) const { return m * m; }

  /// relu(N(M x)), keeping what the backward needs.
  Tensor reaction(const Tensor& x, Context& ctx, Reaction& r) {
    r.pre = bn_.forward(apply_one_by_one(mix_, x), ctx.mode, ctx.recording() ? &r.bn : nullptr);
    return relu(r.pre);
  }

  /// Cotangent of x through relu(N(M x)) given the cotangent of that output.
  Tensor reaction_backward(const Reaction& r, const Tensor& x, const Tensor& dout) {
    const auto dz = bn_.backward(r.bn, relu_backward(r.pre, dout));
    one_by_one_grad_accumulate(dz, x, dmix_);
    return apply_one_by_one_transpose(mix_, dz);
  }

  StencilBank<double> bank_, dbank_;
  ChannelMatrix<double> mix_, dmix_;
  BatchNorm bn_;
  double h_;
};

/// Explicit step; `circulant` swaps the depth-wise K for the block-circulant one.
class RdExplicitStep : public ReactionDiffusionBase {
 public:
  RdExplicitStep(std::size_t c, std::size_t m, double h = 1.0, bool circulant = false)
      : ReactionDiffusionBase(c, m, h), circulant_(circulant) {}

  std::string_view kind() const override { return circulant_ ? "rd_circulant" : "rd_explicit"; }
  bool circulant() const noexcept { return circulant_; }

  Tensor forward(const Tensor& x, Context& ctx) override {
    detail::check_step(circulant_ ? "RdCirculantStep" : "RdExplicitStep", bank_.count(), x.shape());
    Cache c;
    auto y = x;
    if (circulant_) {
      y.axpy(-h_, gram(x));
    } else {
      // The spectra of x serve both K^T K x and the stencil gradient.
      c.spectra = plane_spectra(x);
      y.axpy(-h_, spectra_to_tensor(c.spectra, &power(x.shape())));
    }
    y.axpy(h_, reaction(x, ctx, c.reaction));
    if (ctx.recording()) {
      c.x = x;
      ctx.tape->record(*this, std::move(c));
    }
    return y;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "RdExplicitStep");
    // d/dtheta of -h <dy, K^T K x> = -h (G(K x, dy) + G(K dy, x))
    StencilBank<double> g(bank_.stencil_size(), bank_.count());
    auto dx = dy;
    if (circulant_) {
      grad_accumulate(apply_k(c.x), dy, g);
      grad_accumulate(apply_k(dy), c.x, g);
      dx.axpy(-h_, gram(dy));
    } else {
      const auto dys = plane_spectra(dy);
      depthwise_gram_grad_accumulate(bank_, dys, c.spectra, g);
      dx.axpy(-h_, spectra_to_tensor(dys, &power(dy.shape())));
    }
    for (std::size_t k = 0; k < g.weights().size(); ++k)
      dbank_.weights()[k] -= h_ * g.weights()[k];
    dx += reaction_backward(c.reaction, c.x, h_ * dy);
    return dx;
  }

 protected:
  std::size_t fan_in(std::size_t m) const override {
    return circulant_ ? m * m * bank_.count() : m * m;
  }

 private:
  struct Cache {
    Tensor x;
    PlaneSpectra spectra;
    Reaction reaction;
  };

  /// |symbol|^2 per channel, rebuilt when the weights or grid change.
  const ChannelMultipliers& power(const Shape4& s) {
    const std::vector<double> w(bank_.weights().begin(), bank_.weights().end());
    if (w != power_weights_ || s.h != power_h_ || s.w != power_w_) {
      power_ = depthwise_power(bank_, s.h, s.w);
      power_weights_ = w;
      power_h_ = s.h;
      power_w_ = s.w;
    }
    return power_;
  }

  Tensor apply_k(const Tensor& x) const {
    return circulant_ ? apply_circulant(bank_, x) : apply_depthwise(bank_, x);
  }
  Tensor gram(const Tensor& x) const {
    return circulant_ ? apply_circulant_transpose(bank_, apply_circulant(bank_, x))
                      : apply_depthwise_gram(bank_, x);
  }
  void grad_accumulate(const Tensor& u, const Tensor& v, StencilBank<double>& g) const {
    if (circulant_)
      circulant_bank_grad_accumulate(u, v, g);
    else
      depthwise_grad_accumulate(u, v, g);
  }

  bool circulant_;
  ChannelMultipliers power_;
  std::vector<double> power_weights_;
  std::size_t power_h_ = 0, power_w_ = 0;
};

class RdImplicitStep : public ReactionDiffusionBase {
 public:
  RdImplicitStep(std::size_t c, std::size_t m, double h = 1.0)
      : ReactionDiffusionBase(c, m, h) {}

  std::string_view kind() const override { return "rd_implicit"; }

  Tensor forward(const Tensor& x, Context& ctx) override {
    detail::check_step("RdImplicitStep", bank_.count(), x.shape());
    Cache c;
    auto r = x;
    r.axpy(h_, reaction(x, ctx, c.reaction));
    // Y = A^{-1} R in the frequency domain; its spectra feed the gradient.
    c.spectra = plane_spectra(r);
    scale_spectra(c.spectra, inverse(x.shape()));
    // With a unit multiplier (zero stencils or h = 0) the solve is skipped
    // so the step is exactly the identity on r.
    auto y = inverse_is_identity_ ? r : spectra_to_tensor(c.spectra);
    if (ctx.recording()) {
      c.x = x;
      ctx.tape->record(*this, std::move(c));
    }
    return y;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "RdImplicitStep");
    // The solve is self-adjoint: dr = A^{-1} dy. With A = I + h K^T K,
    // d<dy, A^{-1} r> = -<dr, dA y> = -h (G(K y, dr) + G(K dr, y)).
    auto drs = plane_spectra(dy);
    scale_spectra(drs, inverse(dy.shape()));
    const auto dr = inverse_is_identity_ ? dy : spectra_to_tensor(drs);
    StencilBank<double> g(bank_.stencil_size(), bank_.count());
    depthwise_gram_grad_accumulate(bank_, drs, c.spectra, g);
    for (std::size_t k = 0; k < g.weights().size(); ++k)
      dbank_.weights()[k] -= h_ * g.weights()[k];
    return dr + reaction_backward(c.reaction, c.x, h_ * dr);
  }

 private:
  struct Cache {
    Tensor x;
    PlaneSpectra spectra;
    Reaction reaction;
  };

  const ChannelMultipliers& inverse(const Shape4& s) {
    const std::vector<double> w(bank_.weights().begin(), bank_.weights().end());
    if (w != inverse_weights_ || h_ != inverse_step_ || s.h != inverse_h_ || s.w != inverse_w_) {
      inverse_ = depthwise_diffusion_inverse(bank_, h_, s.h, s.w);
      inverse_is_identity_ = std::ranges::all_of(
          inverse_, [](const auto& m) { return std::ranges::all_of(m, [](double v) { return v == 1.0; }); });
      inverse_weights_ = w;
      inverse_step_ = h_;
      inverse_h_ = s.h;
      inverse_w_ = s.w;
    }
    return inverse_;
  }

  ChannelMultipliers inverse_;
  bool inverse_is_identity_ = false;
  std::vector<double> inverse_weights_;
  double inverse_step_ = -1;
  std::size_t inverse_h_ = 0, inverse_w_ = 0;
};

// ---------------------------------------------------------------------------
// Connecting layer: concat with depth-wise copy, batchnorm, 2x2 mean pool

class ConnectingLayer : public InitializableLayer {
 public:
  ConnectingLayer(std::size_t c, std::size_t m)
      : bank_(m, c), dbank_(m, c), bn_(2 * c) {}

  std::string_view kind() const override { return "connecting"; }
  StencilBank<double>& bank() noexcept { return bank_; }
  BatchNorm& norm() noexcept { return bn_; }

  void initialize(Rng& rng) override {
    const auto m = bank_.stencil_size();
    init_he(bank_.weights(), m * m, rng);
  }
  std::vector<BatchNorm*> norms() override { return {&bn_}; }
  std::vector<ParamRef> params() override {
    return detail::join({{qualified("theta"), bank_.weights(), dbank_.weights()}},
                        bn_.params(qualified("norm")));
  }
  Shape4 output_shape(const Shape4& in) const override {
    return {in.n, 2 * in.c, in.h / 2, in.w / 2};
  }

  Tensor forward(const Tensor& x, Context& ctx) override {
    const auto& s = x.shape();
    detail::check_step("ConnectingLayer", bank_.count(), s);
    if (s.h % 2 != 0 || s.w % 2 != 0)
      throw Error("ConnectingLayer: height and width must be even, got " + to_string(s));
    Cache c;
    auto u = concat_channels(x, apply_depthwise(bank_, x));
    auto y = avgpool2(bn_.forward(u, ctx.mode, ctx.recording() ? &c.bn : nullptr));
    if (ctx.recording()) {
      c.x = x;
      ctx.tape->record(*this, std::move(c));
    }
    return y;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "ConnectingLayer");
    const std::size_t ch = bank_.count();
    const auto du = bn_.backward(c.bn, avgpool2_backward(dy));
    const auto dk = slice_channels(du, ch, ch);
    depthwise_grad_accumulate(dk, c.x, dbank_);
    return slice_channels(du, 0, ch) + apply_depthwise_transpose(bank_, dk);
  }

 private:
  struct Cache {
    Tensor x;
    BatchNorm::Cache bn;
  };
  StencilBank<double> bank_, dbank_;
  BatchNorm bn_;
};

// ---------------------------------------------------------------------------
// Classifier: global average pool and affine map to logits

class ClassifierLayer : public InitializableLayer {
 public:
  ClassifierLayer(std::size_t c, std::size_t classes)
      : w_(classes, c), dw_(classes, c), mu_(classes, 0.0), dmu_(classes, 0.0) {}

  std::string_view kind() const override { return "classifier"; }
  ChannelMatrix<double>& weights() noexcept { return w_; }
  std::span<double> bias() noexcept { return mu_; }

  /// The classifier starts at zero.
  void initialize(Rng&) override {
    std::fill(w_.weights().begin(), w_.weights().end(), 0.0);
    std::fill(mu_.begin(), mu_.end(), 0.0);
  }
  std::vector<ParamRef> params() override {
    return {{qualified("W"), w_.weights(), dw_.weights()}, {qualified("mu"), mu_, dmu_}};
  }
  Shape4 output_shape(const Shape4& in) const override { return {in.n, w_.rows(), 1, 1}; }

  Tensor forward(const Tensor& x, Context& ctx) override {
    auto logits = classifier_logits(w_, mu_, x);
    if (ctx.recording()) ctx.tape->record(*this, Cache{channel_reduce_mean(x), x.shape()});
    return logits;
  }

  Tensor backward(const std::any& cache, const Tensor& dy) override {
    const auto& c = detail::cache_as<Cache>(cache, "ClassifierLayer");
    const auto& s = c.in;
    Tensor dx(s);
    const double inv = 1.0 / static_cast<double>(s.plane());
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t r = 0; r < w_.rows(); ++r) {
        const double g = dy(n, r, 0, 0);
        dmu_[r] += g;
        for (std::size_t q = 0; q < w_.cols(); ++q) dw_(r, q) += g * c.pooled(n, q, 0, 0);
      }
      for (std::size_t q = 0; q < w_.cols(); ++q) {
        double acc = 0;
        for (std::size_t r = 0; r < w_.rows(); ++r) acc += w_(r, q) * dy(n, r, 0, 0);
        for (auto& v : dx.plane(n, q)) v = acc * inv;
      }
    }
    return dx;
  }

 private:
  struct Cache {
    Tensor pooled;
    Shape4 in;
  };
  ChannelMatrix<double> w_, dw_;
  std::vector<double> mu_, dmu_;
};

/// Builds one step of the requested kind on c channels.
inline std::unique_ptr<InitializableLayer> make_step(StepKind kind, std::size_t c, std::size_t m,
                                                     double h) {
  switch (kind) {
    case StepKind::resnet: return std::make_unique<ResNetStep>(c, m);
    case StepKind::mobilenet: return std::make_unique<MobileNetStep>(c, m);
    case StepKind::linearmix: return std::make_unique<LinearMixStep>(c, m);
    case StepKind::rd_explicit: return std::make_unique<RdExplicitStep>(c, m, h, false);
    case StepKind::rd_implicit: return std::make_unique<RdImplicitStep>(c, m, h);
    case StepKind::rd_circulant: return std::make_unique<RdExplicitStep>(c, m, h, true);
  }
  throw Error("make_step: unknown step kind");
}

}  // namespace leanconv
