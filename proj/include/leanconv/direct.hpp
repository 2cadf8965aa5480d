#pragma once

// Direct (spatial-domain) periodic stencil kernels on single H x W planes.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "leanconv/operators.hpp"
#include "leanconv/tensor.hpp"

namespace leanconv::direct {

/// Offset d in (-H, H) reduced to [0, H).
inline std::size_t wrap(std::ptrdiff_t d, std::size_t n) noexcept {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  return static_cast<std::size_t>(((d % sn) + sn) % sn);
}

/// Row `si` of an H x W plane with p wrapped columns on each side:
/// pad[k] = x[si, (k - p) mod W].
template <std::floating_point T>
void pad_row(const T* x, std::size_t si, std::size_t wd, std::size_t p,
             std::vector<T>& pad) {
  pad.resize(wd + 2 * p);
  const T* src = x + si * wd;
  std::copy_n(src, wd, pad.begin() + static_cast<std::ptrdiff_t>(p));
  for (std::size_t k = 0; k < p; ++k) {
    pad[p - 1 - k] = src[wrap(-1 - static_cast<std::ptrdiff_t>(k), wd)];
    pad[p + wd + k] = src[k % wd];
  }
}

/// out += C(s) x (transpose == false) or out += C(s)^T x (transpose == true),
/// with periodic boundaries and correlation orientation.
template <std::floating_point T>
void correlate_accumulate(StencilView<T> s, const T* x, T* out, std::size_t h,
                          std::size_t wd, bool transpose = false) {
  const std::size_t m = s.m;
  const auto p = s.radius();
  thread_local std::vector<T> pad;
  for (std::size_t i = 0; i < h; ++i) {
    T* __restrict dst = out + i * wd;
    for (std::size_t a = 0; a < m; ++a) {
      // C^T uses the point-reflected stencil.
      const std::size_t ta = transpose ? m - 1 - a : a;
      pad_row(x, wrap(static_cast<std::ptrdiff_t>(i + a) - p, h), wd,
              static_cast<std::size_t>(p), pad);
      for (std::size_t b = 0; b < m; ++b) {
        const T w = s.at(ta, transpose ? m - 1 - b : b);
        if (w == T(0)) continue;
        const T* __restrict src = pad.data() + b;
        for (std::size_t j = 0; j < wd; ++j) dst[j] += w * src[j];
      }
    }
  }
}

/// grad[a, b] += sum_i dy[i] x[i + (a - p, b - p)]: the derivative of
/// <dy, C(s) x> with respect to the taps of s.
template <std::floating_point T>
void stencil_grad_accumulate(const T* dy, const T* x, std::size_t h,
                             std::size_t wd, std::size_t m, std::span<T> grad) {
  const auto p = static_cast<std::ptrdiff_t>(m / 2);
  thread_local std::vector<T> pad;
  std::vector<leanconv::detail::Lanes<T>> acc(m * m);
  for (std::size_t i = 0; i < h; ++i) {
    const T* row = dy + i * wd;
    for (std::size_t a = 0; a < m; ++a) {
      pad_row(x, wrap(static_cast<std::ptrdiff_t>(i + a) - p, h), wd,
              static_cast<std::size_t>(p), pad);
      for (std::size_t b = 0; b < m; ++b) acc[a * m + b].add_products(row, pad.data() + b, wd);
    }
  }
  for (std::size_t k = 0; k < m * m; ++k) grad[k] += acc[k].total();
}

}  // namespace leanconv::direct
