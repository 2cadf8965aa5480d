#pragma once

// Periodic convolution in the Fourier domain.
//
// A stencil acting by periodic correlation is diagonalized by the 2-D DFT:
//   C y = ifft2( fft2(C e_1) .* fft2(y) ),
// where C e_1 is the stencil rotated by 180 degrees and wrapped so that its
// center tap sits at (0, 0). The transform of C e_1 is the stencil's symbol.
// The block-circulant operator with circulant blocks is diagonalized the same
// way by the 3-D DFT over (channel, row, column).

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <span>
#include <vector>

#include "leanconv/error.hpp"
#include "leanconv/direct.hpp"
#include "leanconv/fft.hpp"
#include "leanconv/operators.hpp"
#include "leanconv/parallel.hpp"
#include "leanconv/tensor.hpp"

namespace leanconv {

using cplx = std::complex<double>;

/// Row-major complex array of extent depth x h x w (depth == 1 for planes).
struct ComplexGrid {
  std::size_t depth = 1;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<cplx> data;

  ComplexGrid() = default;
  ComplexGrid(std::size_t depth_, std::size_t h_, std::size_t w_)
      : depth(depth_), h(h_), w(w_), data(depth_ * h_ * w_) {}

  std::size_t size() const noexcept { return data.size(); }
  cplx& operator()(std::size_t k, std::size_t i, std::size_t j) noexcept {
    return data[(k * h + i) * w + j];
  }
  const cplx& operator()(std::size_t k, std::size_t i,
                         std::size_t j) const noexcept {
    return data[(k * h + i) * w + j];
  }
  cplx& operator()(std::size_t i, std::size_t j) noexcept {
    return data[i * w + j];
  }
  const cplx& operator()(std::size_t i, std::size_t j) const noexcept {
    return data[i * w + j];
  }
};

/// Fourier multiplier of a periodic stencil on an h x w grid.
struct Symbol2D {
  ComplexGrid grid;
  std::size_t m = 0;
};

/// Fourier multiplier of a block-circulant operator on a c x h x w grid.
struct Symbol3D {
  ComplexGrid grid;
  std::size_t m = 0;
};

// ---------------------------------------------------------------------------
// Transforms

template <std::floating_point T>
ComplexGrid fft2(std::span<const T> plane, std::size_t h, std::size_t w) {
  detail::check_dim("fft2", "plane size", h * w, plane.size());
  ComplexGrid g(1, h, w);
  std::copy(plane.begin(), plane.end(), g.data.begin());
  fft::transform2(g.data, h, w, fft::Direction::forward);
  return g;
}

inline ComplexGrid fft2(ComplexGrid g) {
  fft::transform2(g.data, g.h, g.w, fft::Direction::forward);
  return g;
}

/// Inverse of fft2, scaled by 1/(h w).
inline ComplexGrid ifft2(ComplexGrid g) {
  fft::transform2(g.data, g.h, g.w, fft::Direction::backward);
  const double scale = 1.0 / static_cast<double>(g.h * g.w);
  for (auto& v : g.data) v *= scale;
  return g;
}

inline ComplexGrid fft3(ComplexGrid g) {
  fft::transform3(g.data, g.depth, g.h, g.w, fft::Direction::forward);
  return g;
}

/// Inverse of fft3, scaled by 1/(c h w).
inline ComplexGrid ifft3(ComplexGrid g) {
  fft::transform3(g.data, g.depth, g.h, g.w, fft::Direction::backward);
  const double scale = 1.0 / static_cast<double>(g.size());
  for (auto& v : g.data) v *= scale;
  return g;
}

// ---------------------------------------------------------------------------
// Symbols

namespace detail {

template <std::floating_point T>
void check_admissible(const char* where, StencilView<T> s, std::size_t h,
                      std::size_t w) {
  check_odd_stencil(where, s.m);
  if (s.m > std::min(h, w))
    throw Error(std::string(where) + ": stencil size " + std::to_string(s.m) +
                " exceeds grid " + std::to_string(h) + "x" +
                std::to_string(w));
}

/// Adds the wrapped, rotated stencil (= C e_1) into plane k of the grid.
template <std::floating_point T>
void embed_kernel(StencilView<T> s, ComplexGrid& g, std::size_t k) {
  const auto p = s.radius();
  for (std::size_t a = 0; a < s.m; ++a) {
    for (std::size_t b = 0; b < s.m; ++b) {
      const auto i = direct::wrap(p - static_cast<std::ptrdiff_t>(a), g.h);
      const auto j = direct::wrap(p - static_cast<std::ptrdiff_t>(b), g.w);
      g(k, i, j) += static_cast<double>(s.at(a, b));
    }
  }
}

}  // namespace detail

template <std::floating_point T>
Symbol2D stencil_to_symbol2(StencilView<T> s, std::size_t h, std::size_t w) {
  detail::check_admissible("stencil_to_symbol2", s, h, w);
  Symbol2D sym{ComplexGrid(1, h, w), s.m};
  detail::embed_kernel(s, sym.grid, 0);
  fft::transform2(sym.grid.data, h, w, fft::Direction::forward);
  return sym;
}

template <std::floating_point T>
Symbol2D stencil_to_symbol2(const Stencil<T>& s, std::size_t h,
                            std::size_t w) {
  return stencil_to_symbol2(s.view(), h, w);
}

/// 3-D symbol of the block-circulant operator whose block (r, q) is the
/// stencil bank[(q - r) mod c].
template <std::floating_point T>
Symbol3D circulant_symbol3(const StencilBank<T>& bank, std::size_t h,
                           std::size_t w) {
  const std::size_t c = bank.count();
  if (c == 0) throw Error("circulant_symbol3: empty bank");
  Symbol3D sym{ComplexGrid(c, h, w), bank.stencil_size()};
  for (std::size_t t = 0; t < c; ++t) {
    auto s = bank.stencil(t);
    detail::check_admissible("circulant_symbol3", s, h, w);
    // Column 0 of block row k holds stencil (0 - k) mod c.
    const std::size_t k = direct::wrap(-static_cast<std::ptrdiff_t>(t), c);
    detail::embed_kernel(s, sym.grid, k);
  }
  fft::transform3(sym.grid.data, c, h, w, fft::Direction::forward);
  return sym;
}

/// 1 / (h |symbol|^2 + 1) at every frequency.
inline std::vector<double> diffusion_inverse_multiplier(const Symbol2D& sym,
                                                        double step) {
  std::vector<double> mult(sym.grid.size());
  for (std::size_t k = 0; k < mult.size(); ++k)
    mult[k] = 1.0 / (step * std::norm(sym.grid.data[k]) + 1.0);
  return mult;
}

// ---------------------------------------------------------------------------
// Plane-level application

namespace detail {

/// Scratch space for filter_plane, reused across planes.
struct PlaneBuffers {
  std::vector<double> real;
  std::vector<cplx> half;
};

/// out = ifft2( mult .* fft2(x) ) for one real plane; mult is indexed like
/// the full h x w grid and must be Hermitian (the symbol of a real stencil,
/// its conjugate, or a real even multiplier), so only the half spectrum is
/// formed.
template <std::floating_point T, class Mult>
void filter_plane(std::span<const T> x, std::span<T> out, std::size_t h,
                  std::size_t w, Mult&& mult, PlaneBuffers& buf) {
  const std::size_t hw = w / 2 + 1;
  buf.real.assign(x.begin(), x.end());
  buf.half.resize(h * hw);
  fft::real_forward2(buf.real, buf.half, h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < hw; ++j) buf.half[i * hw + j] *= mult(i * w + j);
  fft::real_backward2(buf.half, buf.real, h, w);
  const double scale = 1.0 / static_cast<double>(h * w);
  for (std::size_t k = 0; k < buf.real.size(); ++k)
    out[k] = static_cast<T>(buf.real[k] * scale);
}

}  // namespace detail

/// Applies C(s) (or its transpose) to every plane of x with periodic
/// boundaries, via the symbol.
template <std::floating_point T>
Tensor4<T> circular_conv2(StencilView<T> s, const Tensor4<T>& x,
                          bool transpose = false) {
  const auto& sh = x.shape();
  const auto sym = stencil_to_symbol2(s, sh.h, sh.w);
  Tensor4<T> out(sh);
  const auto& g = sym.grid.data;
  parallel_for(sh.n, [&](std::size_t n) {
    detail::PlaneBuffers buf;
    for (std::size_t c = 0; c < sh.c; ++c) {
      detail::filter_plane<T>(
          x.plane(n, c), out.plane(n, c), sh.h, sh.w,
          [&](std::size_t k) { return transpose ? std::conj(g[k]) : g[k]; },
          buf);
    }
  });
  return out;
}

template <std::floating_point T>
Tensor4<T> circular_conv2(const Stencil<T>& s, const Tensor4<T>& x) {
  return circular_conv2(s.view(), x, false);
}

template <std::floating_point T>
Tensor4<T> circular_conv2_transpose(const Stencil<T>& s, const Tensor4<T>& x) {
  return circular_conv2(s.view(), x, true);
}

/// Solves (I + h C^T C) z = x on every plane of x.
template <std::floating_point T>
Tensor4<T> inverse_diffusion_apply(StencilView<T> s, double step,
                                   const Tensor4<T>& x) {
  if (!(step >= 0.0))
    throw Error("inverse_diffusion_apply: step size must be non-negative");
  const auto& sh = x.shape();
  const auto sym = stencil_to_symbol2(s, sh.h, sh.w);
  const auto mult = diffusion_inverse_multiplier(sym, step);
  Tensor4<T> out(sh);
  parallel_for(sh.n, [&](std::size_t n) {
    detail::PlaneBuffers buf;
    for (std::size_t c = 0; c < sh.c; ++c) {
      detail::filter_plane<T>(x.plane(n, c), out.plane(n, c), sh.h, sh.w,
                              [&](std::size_t k) { return mult[k]; }, buf);
    }
  });
  return out;
}

template <std::floating_point T>
Tensor4<T> inverse_diffusion_apply(const Stencil<T>& s, double step,
                                   const Tensor4<T>& x) {
  return inverse_diffusion_apply(s.view(), step, x);
}

/// Block-circulant product K_circ x (or K_circ^T x) through the 3-D FFT.
template <std::floating_point T>
Tensor4<T> circulant_conv3(const StencilBank<T>& bank, const Tensor4<T>& x,
                           bool transpose = false) {
  const auto& sh = x.shape();
  detail::check_dim("circulant_conv3", "channels", bank.count(), sh.c);
  const auto sym = circulant_symbol3(bank, sh.h, sh.w);
  Tensor4<T> out(sh);
  const auto& g = sym.grid.data;
  parallel_for(sh.n, [&](std::size_t n) {
    fft::AlignedComplex buf(x.sample(n).begin(), x.sample(n).end());
    fft::transform3(buf, sh.c, sh.h, sh.w, fft::Direction::forward);
    for (std::size_t k = 0; k < buf.size(); ++k)
      buf[k] *= transpose ? std::conj(g[k]) : g[k];
    fft::transform3(buf, sh.c, sh.h, sh.w, fft::Direction::backward);
    const double scale = 1.0 / static_cast<double>(buf.size());
    auto dst = out.sample(n);
    for (std::size_t k = 0; k < buf.size(); ++k)
      dst[k] = static_cast<T>(buf[k].real() * scale);
  });
  return out;
}

template <std::floating_point T>
Tensor4<T> circulant_conv3_transpose(const StencilBank<T>& bank,
                                     const Tensor4<T>& x) {
  return circulant_conv3(bank, x, true);
}

/// Derivative of <dy, K_circ x> with respect to the generating bank:
/// grad[k](a, b) = sum_{n, r, i} dy[n, r, i] x[n, (r + k) mod c, i + d_ab],
/// evaluated as a 3-D cross-correlation in the Fourier domain.
template <std::floating_point T>
void circulant_bank_grad_accumulate(const Tensor4<T>& dy, const Tensor4<T>& x,
                                    StencilBank<T>& grad) {
  const auto& sh = x.shape();
  detail::check_same_shape("circulant_bank_grad", dy.shape(), sh);
  detail::check_dim("circulant_bank_grad", "channels", grad.count(), sh.c);
  const std::size_t m = grad.stencil_size();
  const auto p = static_cast<std::ptrdiff_t>(m / 2);
  std::vector<cplx> acc(sh.sample(), cplx(0.0));
  std::vector<cplx> fa, fb;
  for (std::size_t n = 0; n < sh.n; ++n) {
    fa.assign(dy.sample(n).begin(), dy.sample(n).end());
    fb.assign(x.sample(n).begin(), x.sample(n).end());
    fft::transform3(fa, sh.c, sh.h, sh.w, fft::Direction::forward);
    fft::transform3(fb, sh.c, sh.h, sh.w, fft::Direction::forward);
    for (std::size_t k = 0; k < acc.size(); ++k)
      acc[k] += std::conj(fa[k]) * fb[k];
  }
  fft::transform3(acc, sh.c, sh.h, sh.w, fft::Direction::backward);
  const double scale = 1.0 / static_cast<double>(acc.size());
  for (std::size_t k = 0; k < sh.c; ++k) {
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) {
        const auto i = direct::wrap(static_cast<std::ptrdiff_t>(a) - p, sh.h);
        const auto j = direct::wrap(static_cast<std::ptrdiff_t>(b) - p, sh.w);
        grad.at(k, a, b) +=
            static_cast<T>(acc[(k * sh.h + i) * sh.w + j].real() * scale);
      }
    }
  }
}

}  // namespace leanconv
