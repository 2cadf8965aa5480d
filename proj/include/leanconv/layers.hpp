#pragma once

// Building blocks shared by every step: ReLU, batch normalization, 2x2
// average pooling, the pooled softmax classifier and the cross-entropy loss.
// Each forward has a matching backward that consumes a cache.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "leanconv/autograd.hpp"
#include "leanconv/error.hpp"
#include "leanconv/operators.hpp"
#include "leanconv/tensor.hpp"

namespace leanconv {

// ---------------------------------------------------------------------------
// ReLU

/// dy where the pre-activation is strictly positive, zero elsewhere.
inline Tensor relu_backward(const Tensor& pre, const Tensor& dy) {
  detail::check_same_shape("relu_backward", pre.shape(), dy.shape());
  Tensor out(dy.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = pre[k] > 0.0 ? dy[k] : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct NormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  bool initialized = false;

  explicit NormState(std::size_t c = 0, double eps_ = 1e-5)
      : running_mean(c, 0.0), running_var(c, 1.0), eps(eps_) {}
};

class BatchNorm {
 public:
  struct Cache {
    Tensor xhat;
    std::vector<double> inv_std;
    bool train = false;
  };

  explicit BatchNorm(std::size_t channels = 0, bool affine = true,
                     double eps = 1e-5, double momentum = 0.1)
      : channels_(channels),
        affine_(affine),
        momentum_(momentum),
        gamma_(channels, 1.0),
        beta_(channels, 0.0),
        dgamma_(channels, 0.0),
        dbeta_(channels, 0.0),
        state_(channels, eps) {
    if (!(eps > 0.0)) throw Error("BatchNorm: epsilon must be positive");
    if (!(momentum > 0.0 && momentum <= 1.0))
      throw Error("BatchNorm: momentum must lie in (0, 1]");
  }

  std::size_t channels() const noexcept { return channels_; }
  bool affine() const noexcept { return affine_; }
  std::span<double> gamma() noexcept { return gamma_; }
  std::span<double> beta() noexcept { return beta_; }
  std::span<const double> gamma() const noexcept { return gamma_; }
  std::span<const double> beta() const noexcept { return beta_; }
  NormState& state() noexcept { return state_; }
  const NormState& state() const noexcept { return state_; }

  /// Without affine parameters the layer is pure standardization.
  void set_affine(bool affine) {
    affine_ = affine;
    if (!affine) {
      std::fill(gamma_.begin(), gamma_.end(), 1.0);
      std::fill(beta_.begin(), beta_.end(), 0.0);
    }
  }

  std::vector<ParamRef> params(const std::string& prefix) {
    if (!affine_) return {};
    return {{prefix + ".gamma", gamma_, dgamma_}, {prefix + ".beta", beta_, dbeta_}};
  }

  Tensor forward(const Tensor& x, Mode mode, Cache* cache = nullptr) {
    const auto& s = x.shape();
    detail::check_dim("BatchNorm", "channels", channels_, s.c);
    const std::size_t count = s.n * s.plane();
    std::vector<double> mean(s.c), inv_std(s.c);
    if (mode == Mode::train) {
      if (count < 2)
        throw Error("BatchNorm: train mode needs at least 2 values per channel");
      for (std::size_t c = 0; c < s.c; ++c) {
        detail::Lanes<double> acc;
        for (std::size_t n = 0; n < s.n; ++n) acc.add(x.plane(n, c).data(), s.plane());
        const double mu = acc.total() / static_cast<double>(count);
        detail::Lanes<double> dev;
        std::vector<double> centered(s.plane());
        for (std::size_t n = 0; n < s.n; ++n) {
          const double* __restrict src = x.plane(n, c).data();
          double* __restrict dst = centered.data();
          for (std::size_t k = 0; k < s.plane(); ++k) dst[k] = src[k] - mu;
          dev.add_products(dst, dst, s.plane());
        }
        const double sq = dev.total();
        const double var = sq / static_cast<double>(count);
        mean[c] = mu;
        inv_std[c] = 1.0 / std::sqrt(var + state_.eps);
        const double unbiased = sq / static_cast<double>(count - 1);
        state_.running_mean[c] = (1 - momentum_) * state_.running_mean[c] + momentum_ * mu;
        state_.running_var[c] = (1 - momentum_) * state_.running_var[c] + momentum_ * unbiased;
      }
      state_.initialized = true;
    } else {
      if (!state_.initialized)
        throw Error("BatchNorm: eval mode before running statistics were initialized");
      for (std::size_t c = 0; c < s.c; ++c) {
        mean[c] = state_.running_mean[c];
        inv_std[c] = 1.0 / std::sqrt(state_.running_var[c] + state_.eps);
      }
    }
    Tensor xhat(s), out(s);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const double* __restrict src = x.plane(n, c).data();
        double* __restrict xh = xhat.plane(n, c).data();
        double* __restrict dst = out.plane(n, c).data();
        const double mu = mean[c], is = inv_std[c], g = gamma_[c], b = beta_[c];
        for (std::size_t k = 0; k < s.plane(); ++k) {
          xh[k] = (src[k] - mu) * is;
          dst[k] = g * xh[k] + b;
        }
      }
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
      cache->train = mode == Mode::train;
    }
    return out;
  }

  /// Train mode differentiates through the batch statistics; eval mode is a
  /// per-channel affine map.
  Tensor backward(const Cache& cache, const Tensor& dy) {
    const auto& s = dy.shape();
    detail::check_same_shape("BatchNorm::backward", cache.xhat.shape(), s);
    const double count = static_cast<double>(s.n * s.plane());
    Tensor dx(s);
    for (std::size_t c = 0; c < s.c; ++c) {
      detail::Lanes<double> acc_dy, acc_dy_xhat;
      for (std::size_t n = 0; n < s.n; ++n) {
        acc_dy.add(dy.plane(n, c).data(), s.plane());
        acc_dy_xhat.add_products(dy.plane(n, c).data(), cache.xhat.plane(n, c).data(), s.plane());
      }
      const double sum_dy = acc_dy.total(), sum_dy_xhat = acc_dy_xhat.total();
      if (affine_) {
        dgamma_[c] += sum_dy_xhat;
        dbeta_[c] += sum_dy;
      }
      const double scale = gamma_[c] * cache.inv_std[c];
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* __restrict g = dy.plane(n, c).data();
        const double* __restrict xh = cache.xhat.plane(n, c).data();
        double* __restrict out = dx.plane(n, c).data();
        if (cache.train) {
          const double mean_dy = sum_dy / count, mean_dy_xhat = sum_dy_xhat / count;
          for (std::size_t k = 0; k < s.plane(); ++k)
            out[k] = scale * (g[k] - mean_dy - xh[k] * mean_dy_xhat);
        } else {
          for (std::size_t k = 0; k < s.plane(); ++k) out[k] = scale * g[k];
        }
      }
    }
    return dx;
  }

 private:
  std::size_t channels_;
  bool affine_;
  double momentum_;
  std::vector<double> gamma_, beta_, dgamma_, dbeta_;
  NormState state_;
};

// ---------------------------------------------------------------------------
// Pooling

inline Tensor avgpool2(const Tensor& x) {
  const auto& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw Error("avgpool2: height and width must be even, got " + to_string(s));
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor out(Shape4{s.n, s.c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = x.plane(n, c).data();
      double* dst = out.plane(n, c).data();
      for (std::size_t i = 0; i < oh; ++i) {
        const double* r0 = src + 2 * i * s.w;
        const double* r1 = r0 + s.w;
        for (std::size_t j = 0; j < ow; ++j)
          dst[i * ow + j] = 0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
      }
    }
  return out;
}

inline Tensor avgpool2_backward(const Tensor& dy) {
  const auto& s = dy.shape();
  const std::size_t w2 = 2 * s.w;
  Tensor dx(Shape4{s.n, s.c, 2 * s.h, w2});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = dy.plane(n, c).data();
      double* dst = dx.plane(n, c).data();
      for (std::size_t i = 0; i < 2 * s.h; ++i)
        for (std::size_t j = 0; j < w2; ++j) dst[i * w2 + j] = 0.25 * src[(i / 2) * s.w + j / 2];
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax classifier

/// Row-wise softmax of (N, n_c, 1, 1) logits with max subtraction.
inline Tensor softmax(const Tensor& logits) {
  const auto& s = logits.shape();
  const std::size_t nc = s.sample();
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    auto z = logits.sample(n);
    auto p = out.sample(n);
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0;
    for (std::size_t k = 0; k < nc; ++k) total += p[k] = std::exp(z[k] - zmax);
    for (std::size_t k = 0; k < nc; ++k) p[k] /= total;
  }
  return out;
}

/// logits = W * mean_pixels(x) + mu, as an (N, n_c, 1, 1) tensor.
inline Tensor classifier_logits(const ChannelMatrix<double>& w, std::span<const double> mu,
                                const Tensor& x) {
  detail::check_dim("classifier_head", "channels", w.cols(), x.shape().c);
  detail::check_dim("classifier_head", "bias length", w.rows(), mu.size());
  const auto pooled = channel_reduce_mean(x);
  Tensor out(Shape4{x.shape().n, w.rows(), 1, 1});
  for (std::size_t n = 0; n < x.shape().n; ++n)
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double acc = mu[r];
      for (std::size_t q = 0; q < w.cols(); ++q) acc += w(r, q) * pooled(n, q, 0, 0);
      out(n, r, 0, 0) = acc;
    }
  return out;
}

/// Class probabilities S(W pool(x) + mu).
inline Tensor classifier_head(const ChannelMatrix<double>& w, std::span<const double> mu,
                              const Tensor& x) {
  return softmax(classifier_logits(w, mu, x));
}

struct LossResult {
  double loss = 0;
  Tensor dlogits;
};

/// Mean cross entropy over the batch and its gradient (softmax - onehot) / N.
inline LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto& s = logits.shape();
  detail::check_dim("softmax_cross_entropy", "label count", s.n, labels.size());
  const std::size_t nc = s.sample();
  LossResult res{0.0, softmax(logits)};
  const double inv_n = 1.0 / static_cast<double>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= nc)
      throw Error("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                  std::to_string(nc) + ")");
    auto z = logits.sample(n);
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0;
    for (double v : z) total += std::exp(v - zmax);
    res.loss += (std::log(total) + zmax - z[y]) * inv_n;
    auto g = res.dlogits.sample(n);
    g[y] -= 1.0;
    for (auto& v : g) v *= inv_n;
  }
  return res;
}

/// Index of the largest logit per sample.
inline std::vector<int> argmax_classes(const Tensor& logits) {
  std::vector<int> out(logits.shape().n);
  for (std::size_t n = 0; n < out.size(); ++n) {
    auto z = logits.sample(n);
    out[n] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

}  // namespace leanconv
