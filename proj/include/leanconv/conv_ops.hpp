#pragma once

// The five channel-coupling parameterizations as linear maps on Tensor4:
// fully coupled (c_out x c_in grid of stencils), depth-wise (block diagonal),
// 1x1 (Kronecker product of a channel matrix with the identity), LinearMix
// (depth-wise + 1x1) and block circulant with circulant blocks.
//
// Every operator has a forward apply, an adjoint apply, a dense assembly used
// as a test oracle, and an exact weight count.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "leanconv/direct.hpp"
#include "leanconv/error.hpp"
#include "leanconv/operators.hpp"
#include "leanconv/parallel.hpp"
#include "leanconv/spectral.hpp"
#include "leanconv/tensor.hpp"

namespace leanconv {

enum class OpKind {
  fully_coupled,
  depthwise,
  one_by_one,
  linear_mix,
  circulant,
  rd_explicit,
  rd_implicit,
  rd_circulant,
};

inline std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::fully_coupled: return "fully_coupled";
    case OpKind::depthwise: return "depthwise";
    case OpKind::one_by_one: return "one_by_one";
    case OpKind::linear_mix: return "linear_mix";
    case OpKind::circulant: return "circulant";
    case OpKind::rd_explicit: return "rd_explicit";
    case OpKind::rd_implicit: return "rd_implicit";
    case OpKind::rd_circulant: return "rd_circulant";
  }
  return "unknown";
}

inline OpKind parse_op_kind(std::string_view s) {
  for (auto k : {OpKind::fully_coupled, OpKind::depthwise, OpKind::one_by_one,
                 OpKind::linear_mix, OpKind::circulant, OpKind::rd_explicit,
                 OpKind::rd_implicit, OpKind::rd_circulant}) {
    if (to_string(k) == s) return k;
  }
  throw Error("unknown operator kind '" + std::string(s) + "'");
}

/// Weight count per operator kind. The reaction-diffusion kinds count one
/// stencil bank plus one square channel matrix.
inline std::uint64_t param_count(OpKind kind, std::uint64_t m,
                                 std::uint64_t c_in, std::uint64_t c_out) {
  const std::uint64_t m2 = m * m;
  switch (kind) {
    case OpKind::fully_coupled: return m2 * c_in * c_out;
    case OpKind::depthwise: return m2 * c_in;
    case OpKind::one_by_one: return c_in * c_out;
    case OpKind::linear_mix:
    case OpKind::rd_explicit:
    case OpKind::rd_implicit:
    case OpKind::rd_circulant: return m2 * c_in + c_in * c_in;
    case OpKind::circulant: return m2 * c_in;
  }
  return 0;
}

/// Closed-form weight formula as printed in count tables.
inline std::string param_formula(OpKind kind) {
  switch (kind) {
    case OpKind::fully_coupled: return "m^2*c_in*c_out";
    case OpKind::depthwise: return "m^2*c";
    case OpKind::one_by_one: return "c_in*c_out";
    case OpKind::circulant: return "m^2*c";
    default: return "m^2*c+c^2";
  }
}

enum class ConvPath { fft, direct };

// ---------------------------------------------------------------------------
// Fully coupled

namespace detail {

template <class T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using PlaneBlock = Eigen::Map<ColMatrix<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstPlaneBlock = Eigen::Map<const ColMatrix<T>, 0, Eigen::OuterStride<>>;

/// Output rows handled per im2col block, keeping the patch matrix near 2 MB.
inline std::size_t im2col_rows(std::size_t h, std::size_t w, std::size_t patch) {
  const std::size_t budget = (std::size_t{1} << 18) / std::max<std::size_t>(1, patch * w);
  return std::clamp<std::size_t>(budget, 1, h);
}

/// Patch matrix for output rows [i0, i0 + rows) of one sample: column
/// (q, a, b) holds x[q, i + a - p, j + b - p] for every pixel (i, j).
template <std::floating_point T>
void im2col(const T* sample, std::size_t c_in, std::size_t h, std::size_t w,
            std::size_t m, std::size_t i0, std::size_t rows, ColMatrix<T>& col,
            std::vector<T>& pad) {
  const auto p = static_cast<std::ptrdiff_t>(m / 2);
  col.resize(static_cast<Eigen::Index>(rows * w), static_cast<Eigen::Index>(c_in * m * m));
  for (std::size_t q = 0; q < c_in; ++q) {
    const T* plane = sample + q * h * w;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t i = 0; i < rows; ++i) {
        direct::pad_row(plane, direct::wrap(static_cast<std::ptrdiff_t>(i0 + i + a) - p, h), w,
                        m / 2, pad);
        for (std::size_t b = 0; b < m; ++b)
          std::copy_n(pad.data() + b, w,
                      col.col(static_cast<Eigen::Index>((q * m + a) * m + b)).data() + i * w);
      }
  }
}

/// out(n) = K x(n) where taps holds c_out rows of c_in * m^2 weights.
template <std::floating_point T>
Tensor4<T> fully_coupled_gemm(std::span<const T> taps, std::size_t m, std::size_t c_out,
                              const Tensor4<T>& x) {
  const auto& s = x.shape();
  const std::size_t patch = s.c * m * m;
  const Eigen::Map<const ColMatrix<T>> wt(taps.data(), static_cast<Eigen::Index>(patch),
                                          static_cast<Eigen::Index>(c_out));
  Tensor4<T> out(Shape4{s.n, c_out, s.h, s.w});
  const std::size_t chunk = im2col_rows(s.h, s.w, patch);
  parallel_for(s.n, [&](std::size_t n) {
    ColMatrix<T> col;
    std::vector<T> pad;
    for (std::size_t i0 = 0; i0 < s.h; i0 += chunk) {
      const std::size_t rows = std::min(chunk, s.h - i0);
      im2col(x.sample(n).data(), s.c, s.h, s.w, m, i0, rows, col, pad);
      PlaneBlock<T> y(out.sample(n).data() + i0 * s.w, static_cast<Eigen::Index>(rows * s.w),
                      static_cast<Eigen::Index>(c_out),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(s.plane())));
      y.noalias() = col * wt;
    }
  });
  return out;
}

}  // namespace detail

/// Direct evaluation through patch matrices and a dense product per sample.
template <std::floating_point T>
Tensor4<T> apply_fully_coupled(const StencilGrid<T>& g, const Tensor4<T>& x) {
  detail::check_dim("apply_fully_coupled", "input channels", g.in_channels(), x.channels());
  return detail::fully_coupled_gemm(g.weights(), g.stencil_size(), g.out_channels(), x);
}

/// K^T is the fully coupled operator whose (q, r) stencil is the point
/// reflection of stencil (r, q).
template <std::floating_point T>
Tensor4<T> apply_fully_coupled_transpose(const StencilGrid<T>& g,
                                         const Tensor4<T>& y) {
  detail::check_dim("apply_fully_coupled_transpose", "input channels",
                    g.out_channels(), y.channels());
  const std::size_t m = g.stencil_size();
  StencilGrid<T> t(m, g.in_channels(), g.out_channels());
  for (std::size_t r = 0; r < g.out_channels(); ++r)
    for (std::size_t q = 0; q < g.in_channels(); ++q)
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) t.at(q, r, m - 1 - a, m - 1 - b) = g.at(r, q, a, b);
  return detail::fully_coupled_gemm<T>(t.weights(), m, g.in_channels(), y);
}

/// grad(r, q) += d<dy, K x>/d stencil(r, q)
template <std::floating_point T>
void fully_coupled_grad_accumulate(const Tensor4<T>& dy, const Tensor4<T>& x,
                                   StencilGrid<T>& grad) {
  const auto& s = x.shape();
  detail::check_dim("fully_coupled_grad", "input channels", grad.in_channels(),
                    s.c);
  detail::check_dim("fully_coupled_grad", "output channels",
                    grad.out_channels(), dy.channels());
  detail::check_dim("fully_coupled_grad", "batch", s.n, dy.shape().n);
  const std::size_t m = grad.stencil_size(), c_out = grad.out_channels();
  const std::size_t patch = s.c * m * m;
  Eigen::Map<detail::ColMatrix<T>> g(grad.weights().data(), static_cast<Eigen::Index>(patch),
                                     static_cast<Eigen::Index>(c_out));
  const std::size_t chunk = detail::im2col_rows(s.h, s.w, patch);
  detail::ColMatrix<T> col;
  std::vector<T> pad;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i0 = 0; i0 < s.h; i0 += chunk) {
      const std::size_t rows = std::min(chunk, s.h - i0);
      detail::im2col(x.sample(n).data(), s.c, s.h, s.w, m, i0, rows, col, pad);
      detail::ConstPlaneBlock<T> d(dy.sample(n).data() + i0 * s.w,
                                   static_cast<Eigen::Index>(rows * s.w),
                                   static_cast<Eigen::Index>(c_out),
                                   Eigen::OuterStride<>(static_cast<Eigen::Index>(s.plane())));
      g.noalias() += col.transpose() * d;
    }
}

// ---------------------------------------------------------------------------
// Depth-wise

template <std::floating_point T>
Tensor4<T> apply_depthwise(const StencilBank<T>& b, const Tensor4<T>& x,
                           ConvPath path = ConvPath::fft,
                           bool transpose = false) {
  const auto& s = x.shape();
  detail::check_dim("apply_depthwise", "channels", b.count(), s.c);
  Tensor4<T> out(s);
  if (path == ConvPath::direct) {
    parallel_for(s.n, [&](std::size_t n) {
      for (std::size_t c = 0; c < s.c; ++c)
        direct::correlate_accumulate(b.stencil(c), x.plane(n, c).data(),
                                     out.plane(n, c).data(), s.h, s.w,
                                     transpose);
    });
    return out;
  }
  // Channel-outer order keeps one symbol in cache while it filters the
  // whole batch.
  parallel_for(s.c, [&](std::size_t c) {
    const auto sym = stencil_to_symbol2(b.stencil(c), s.h, s.w);
    const auto& g = sym.grid.data;
    detail::PlaneBuffers buf;
    for (std::size_t n = 0; n < s.n; ++n)
      detail::filter_plane<T>(
          x.plane(n, c), out.plane(n, c), s.h, s.w,
          [&](std::size_t k) { return transpose ? std::conj(g[k]) : g[k]; },
          buf);
  });
  return out;
}

template <std::floating_point T>
Tensor4<T> apply_depthwise_transpose(const StencilBank<T>& b,
                                     const Tensor4<T>& y,
                                     ConvPath path = ConvPath::fft) {
  return apply_depthwise(b, y, path, true);
}

/// K_dw^T K_dw x in one pass per plane through |symbol|^2.
template <std::floating_point T>
Tensor4<T> apply_depthwise_gram(const StencilBank<T>& b, const Tensor4<T>& x) {
  const auto& s = x.shape();
  detail::check_dim("apply_depthwise_gram", "channels", b.count(), s.c);
  Tensor4<T> out(s);
  parallel_for(s.c, [&](std::size_t c) {
    const auto sym = stencil_to_symbol2(b.stencil(c), s.h, s.w);
    std::vector<double> power(sym.grid.size());
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(sym.grid.data[k]);
    detail::PlaneBuffers buf;
    for (std::size_t n = 0; n < s.n; ++n)
      detail::filter_plane<T>(x.plane(n, c), out.plane(n, c), s.h, s.w,
                              [&](std::size_t k) { return power[k]; }, buf);
  });
  return out;
}

/// (I + h K_dw^T K_dw)^{-1} x, each channel with its own stencil.
template <std::floating_point T>
Tensor4<T> apply_depthwise_diffusion_inverse(const StencilBank<T>& b,
                                             double step, const Tensor4<T>& x) {
  if (!(step >= 0.0))
    throw Error("apply_depthwise_diffusion_inverse: step size must be non-negative");
  const auto& s = x.shape();
  detail::check_dim("apply_depthwise_diffusion_inverse", "channels", b.count(), s.c);
  std::vector<std::vector<double>> mult(s.c);
  for (std::size_t c = 0; c < s.c; ++c)
    mult[c] = diffusion_inverse_multiplier(
        stencil_to_symbol2(b.stencil(c), s.h, s.w), step);
  Tensor4<T> out(s);
  parallel_for(s.n, [&](std::size_t n) {
    detail::PlaneBuffers buf;
    for (std::size_t c = 0; c < s.c; ++c)
      detail::filter_plane<T>(x.plane(n, c), out.plane(n, c), s.h, s.w,
                              [&](std::size_t k) { return mult[c][k]; }, buf);
  });
  return out;
}

template <std::floating_point T>
void depthwise_grad_accumulate(const Tensor4<T>& dy, const Tensor4<T>& x,
                               StencilBank<T>& grad) {
  const auto& s = x.shape();
  detail::check_same_shape("depthwise_grad", dy.shape(), s);
  detail::check_dim("depthwise_grad", "channels", grad.count(), s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      direct::stencil_grad_accumulate(dy.plane(n, c).data(),
                                      x.plane(n, c).data(), s.h, s.w,
                                      grad.stencil_size(),
                                      grad.stencil_taps(c));
}

/// Half spectra (h x (w/2 + 1) per plane) of every plane of a tensor, kept
/// so that several depth-wise products and a stencil gradient can share one
/// forward transform.
struct PlaneSpectra {
  Shape4 shape;
  std::vector<cplx> data;

  std::size_t half() const noexcept { return shape.h * (shape.w / 2 + 1); }
  std::span<cplx> plane(std::size_t n, std::size_t c) noexcept {
    return std::span<cplx>(data).subspan((n * shape.c + c) * half(), half());
  }
  std::span<const cplx> plane(std::size_t n, std::size_t c) const noexcept {
    return std::span<const cplx>(data).subspan((n * shape.c + c) * half(), half());
  }
};

inline PlaneSpectra plane_spectra(const Tensor4<double>& x) {
  PlaneSpectra out{x.shape(), {}};
  const auto& s = x.shape();
  out.data.resize(s.n * s.c * out.half());
  parallel_for(s.n, [&](std::size_t n) {
    for (std::size_t c = 0; c < s.c; ++c)
      fft::real_forward2(x.plane(n, c), out.plane(n, c), s.h, s.w);
  });
  return out;
}

/// Per-channel real multipliers, indexed like the full h x w grid.
using ChannelMultipliers = std::vector<std::vector<double>>;

/// Spectra scaled in place by a per-channel multiplier.
inline void scale_spectra(PlaneSpectra& sp, const ChannelMultipliers& mult) {
  const auto& s = sp.shape;
  detail::check_dim("scale_spectra", "channels", mult.size(), s.c);
  const std::size_t hw = s.w / 2 + 1;
  parallel_for(s.n, [&](std::size_t n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto z = sp.plane(n, c);
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < hw; ++j) z[i * hw + j] *= mult[c][i * s.w + j];
    }
  });
}

/// Inverse transform of every plane after an optional per-channel multiplier.
inline Tensor4<double> spectra_to_tensor(const PlaneSpectra& sp,
                                         const ChannelMultipliers* mult = nullptr) {
  const auto& s = sp.shape;
  if (mult) detail::check_dim("spectra_to_tensor", "channels", mult->size(), s.c);
  const std::size_t hw = s.w / 2 + 1;
  const double scale = 1.0 / static_cast<double>(s.plane());
  Tensor4<double> out(s);
  parallel_for(s.n, [&](std::size_t n) {
    std::vector<cplx> buf(sp.half());
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto z = sp.plane(n, c);
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < hw; ++j)
          buf[i * hw + j] = mult ? z[i * hw + j] * (*mult)[c][i * s.w + j] : z[i * hw + j];
      auto dst = out.plane(n, c);
      fft::real_backward2(buf, dst, s.h, s.w);
      for (auto& v : dst) v *= scale;
    }
  });
  return out;
}

/// |symbol|^2 of every stencil in the bank on an h x w grid.
template <std::floating_point T>
ChannelMultipliers depthwise_power(const StencilBank<T>& b, std::size_t h, std::size_t w) {
  ChannelMultipliers power(b.count());
  for (std::size_t c = 0; c < b.count(); ++c) {
    const auto sym = stencil_to_symbol2(b.stencil(c), h, w);
    power[c].resize(sym.grid.size());
    for (std::size_t k = 0; k < power[c].size(); ++k) power[c][k] = std::norm(sym.grid.data[k]);
  }
  return power;
}

template <std::floating_point T>
ChannelMultipliers depthwise_diffusion_inverse(const StencilBank<T>& b, double step,
                                               std::size_t h, std::size_t w) {
  ChannelMultipliers mult(b.count());
  for (std::size_t c = 0; c < b.count(); ++c)
    mult[c] = diffusion_inverse_multiplier(stencil_to_symbol2(b.stencil(c), h, w), step);
  return mult;
}

/// grad += d<u, K^T K v>/d theta = G(K v, u) + G(K u, v), summed over the
/// batch, from the half spectra of u and v. The cross-correlation of two
/// planes is the inverse transform of conj(U) V, so the sum over samples is
/// taken in the frequency domain and each channel needs one inverse
/// transform.
inline void depthwise_gram_grad_accumulate(const StencilBank<double>& b, const PlaneSpectra& u,
                                           const PlaneSpectra& v, StencilBank<double>& grad) {
  const auto& s = u.shape;
  detail::check_same_shape("depthwise_gram_grad", v.shape, s);
  detail::check_dim("depthwise_gram_grad", "channels", b.count(), s.c);
  detail::check_dim("depthwise_gram_grad", "channels", grad.count(), s.c);
  const std::size_t hw = s.w / 2 + 1, m = b.stencil_size();
  const auto p = static_cast<std::ptrdiff_t>(m / 2);
  const double scale = 1.0 / static_cast<double>(s.plane());
  parallel_for(s.c, [&](std::size_t c) {
    std::vector<double> cross(u.half(), 0.0);
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto zu = u.plane(n, c), zv = v.plane(n, c);
      for (std::size_t k = 0; k < cross.size(); ++k)
        cross[k] += 2.0 * (std::conj(zv[k]) * zu[k]).real();
    }
    const auto sym = stencil_to_symbol2(b.stencil(c), s.h, s.w);
    std::vector<cplx> z(u.half());
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < hw; ++j)
        z[i * hw + j] = std::conj(sym.grid.data[i * s.w + j]) * cross[i * hw + j];
    std::vector<double> r(s.plane());
    fft::real_backward2(z, r, s.h, s.w);
    auto taps = grad.stencil_taps(c);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t bb = 0; bb < m; ++bb)
        taps[a * m + bb] +=
            scale * r[direct::wrap(static_cast<std::ptrdiff_t>(a) - p, s.h) * s.w +
                      direct::wrap(static_cast<std::ptrdiff_t>(bb) - p, s.w)];
  });
}

// ---------------------------------------------------------------------------
// 1x1

/// out[:, p] = mtx * x[:, p] at every pixel p: one (HW x c_in) by
/// (c_in x c_out) matrix product per sample.
template <std::floating_point T>
Tensor4<T> apply_one_by_one(const ChannelMatrix<T>& mtx, const Tensor4<T>& x) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const auto& s = x.shape();
  detail::check_dim("apply_one_by_one", "input channels", mtx.cols(), s.c);
  Tensor4<T> out(Shape4{s.n, mtx.rows(), s.h, s.w});
  const Eigen::Map<const Mat> m(mtx.weights().data(), mtx.rows(), mtx.cols());
  const auto hw = static_cast<Eigen::Index>(s.plane());
  parallel_for(s.n, [&](std::size_t n) {
    const Eigen::Map<const Mat> xs(x.sample(n).data(), hw, s.c);
    Eigen::Map<Mat> ys(out.sample(n).data(), hw, mtx.rows());
    ys.noalias() = xs * m.transpose();
  });
  return out;
}

template <std::floating_point T>
Tensor4<T> apply_one_by_one_transpose(const ChannelMatrix<T>& mtx,
                                      const Tensor4<T>& y) {
  detail::check_dim("apply_one_by_one_transpose", "input channels", mtx.rows(),
                    y.channels());
  return apply_one_by_one(mtx.transposed(), y);
}

template <std::floating_point T>
void one_by_one_grad_accumulate(const Tensor4<T>& dy, const Tensor4<T>& x,
                                ChannelMatrix<T>& grad) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const auto& s = x.shape();
  detail::check_dim("one_by_one_grad", "input channels", grad.cols(), s.c);
  detail::check_dim("one_by_one_grad", "output channels", grad.rows(),
                    dy.channels());
  const auto hw = static_cast<Eigen::Index>(s.plane());
  Eigen::Map<Mat> g(grad.weights().data(), grad.rows(), grad.cols());
  for (std::size_t n = 0; n < s.n; ++n) {
    const Eigen::Map<const Mat> ds(dy.sample(n).data(), hw, grad.rows());
    const Eigen::Map<const Mat> xs(x.sample(n).data(), hw, s.c);
    g.noalias() += ds.transpose() * xs;
  }
}

// ---------------------------------------------------------------------------
// LinearMix

namespace detail {

template <std::floating_point T>
void check_linear_mix(const char* where, const StencilBank<T>& b,
                      const ChannelMatrix<T>& mtx) {
  if (mtx.rows() != mtx.cols())
    throw ShapeError(where, "mixing matrix columns (must be square)",
                     mtx.rows(), mtx.cols());
  check_dim(where, "bank size", mtx.rows(), b.count());
}

}  // namespace detail

template <std::floating_point T>
Tensor4<T> apply_linear_mix(const StencilBank<T>& b, const ChannelMatrix<T>& mtx,
                            const Tensor4<T>& x,
                            ConvPath path = ConvPath::fft) {
  detail::check_linear_mix("apply_linear_mix", b, mtx);
  auto out = apply_depthwise(b, x, path);
  out += apply_one_by_one(mtx, x);
  return out;
}

template <std::floating_point T>
Tensor4<T> apply_linear_mix_transpose(const StencilBank<T>& b,
                                      const ChannelMatrix<T>& mtx,
                                      const Tensor4<T>& y,
                                      ConvPath path = ConvPath::fft) {
  detail::check_linear_mix("apply_linear_mix_transpose", b, mtx);
  auto out = apply_depthwise_transpose(b, y, path);
  out += apply_one_by_one_transpose(mtx, y);
  return out;
}

// ---------------------------------------------------------------------------
// Block circulant

template <std::floating_point T>
Tensor4<T> apply_circulant(const StencilBank<T>& b, const Tensor4<T>& x) {
  return circulant_conv3(b, x, false);
}

template <std::floating_point T>
Tensor4<T> apply_circulant_transpose(const StencilBank<T>& b,
                                     const Tensor4<T>& y) {
  return circulant_conv3(b, y, true);
}

/// The block-circulant operator written out as a full stencil grid
/// (block (r, q) = bank[(q - r) mod c]).
template <std::floating_point T>
StencilGrid<T> circulant_as_grid(const StencilBank<T>& b) {
  const std::size_t c = b.count();
  const std::size_t m = b.stencil_size();
  StencilGrid<T> g(m, c, c);
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t q = 0; q < c; ++q) {
      const auto src = b.stencil((q + c - r) % c).taps;
      std::copy(src.begin(), src.end(), g.stencil_taps(r, q).begin());
    }
  return g;
}

// ---------------------------------------------------------------------------
// Dense assembly

/// Row-major dense matrix; used only for oracle comparisons.
template <std::floating_point T>
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}

  T& operator()(std::size_t i, std::size_t j) noexcept {
    return data[i * cols + j];
  }
  T operator()(std::size_t i, std::size_t j) const noexcept {
    return data[i * cols + j];
  }

  std::vector<T> multiply(std::span<const T> v) const {
    detail::check_dim("DenseMatrix::multiply", "vector length", cols,
                      v.size());
    std::vector<T> out(rows, T(0));
    for (std::size_t i = 0; i < rows; ++i) {
      T acc = 0;
      for (std::size_t j = 0; j < cols; ++j) acc += data[i * cols + j] * v[j];
      out[i] = acc;
    }
    return out;
  }

  DenseMatrix transposed() const {
    DenseMatrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }
};

inline constexpr std::size_t kDenseAssemblyLimit = 4096;

namespace detail {

inline void check_dense_guard(std::size_t c_in, std::size_t c_out,
                              std::size_t h, std::size_t w) {
  const std::size_t big = std::max(c_in, c_out) * h * w;
  if (big > kDenseAssemblyLimit)
    throw Error("assemble_dense: c*H*W = " + std::to_string(big) +
                " exceeds the limit of " +
                std::to_string(kDenseAssemblyLimit));
}

/// Writes stencil s as block (r, q) of a dense operator on h x w planes.
template <std::floating_point T>
void place_stencil(DenseMatrix<T>& a, StencilView<T> s, std::size_t r,
                   std::size_t q, std::size_t h, std::size_t w) {
  const auto p = s.radius();
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t u = 0; u < s.m; ++u)
        for (std::size_t v = 0; v < s.m; ++v) {
          const auto si = direct::wrap(
              static_cast<std::ptrdiff_t>(i + u) - p, h);
          const auto sj = direct::wrap(
              static_cast<std::ptrdiff_t>(j + v) - p, w);
          a((r * h + i) * w + j, (q * h + si) * w + sj) += s.at(u, v);
        }
}

}  // namespace detail

template <std::floating_point T>
DenseMatrix<T> assemble_fully_coupled(const StencilGrid<T>& g, std::size_t h,
                                      std::size_t w) {
  detail::check_dense_guard(g.in_channels(), g.out_channels(), h, w);
  DenseMatrix<T> a(g.out_channels() * h * w, g.in_channels() * h * w);
  for (std::size_t r = 0; r < g.out_channels(); ++r)
    for (std::size_t q = 0; q < g.in_channels(); ++q)
      detail::place_stencil(a, g.stencil(r, q), r, q, h, w);
  return a;
}

template <std::floating_point T>
DenseMatrix<T> assemble_depthwise(const StencilBank<T>& b, std::size_t h,
                                  std::size_t w) {
  detail::check_dense_guard(b.count(), b.count(), h, w);
  DenseMatrix<T> a(b.count() * h * w, b.count() * h * w);
  for (std::size_t c = 0; c < b.count(); ++c)
    detail::place_stencil(a, b.stencil(c), c, c, h, w);
  return a;
}

template <std::floating_point T>
DenseMatrix<T> assemble_one_by_one(const ChannelMatrix<T>& mtx, std::size_t h,
                                   std::size_t w) {
  detail::check_dense_guard(mtx.cols(), mtx.rows(), h, w);
  DenseMatrix<T> a(mtx.rows() * h * w, mtx.cols() * h * w);
  const std::size_t hw = h * w;
  for (std::size_t r = 0; r < mtx.rows(); ++r)
    for (std::size_t q = 0; q < mtx.cols(); ++q)
      for (std::size_t p = 0; p < hw; ++p) a(r * hw + p, q * hw + p) = mtx(r, q);
  return a;
}

template <std::floating_point T>
DenseMatrix<T> assemble_linear_mix(const StencilBank<T>& b,
                                   const ChannelMatrix<T>& mtx, std::size_t h,
                                   std::size_t w) {
  detail::check_linear_mix("assemble_linear_mix", b, mtx);
  auto a = assemble_depthwise(b, h, w);
  const auto m = assemble_one_by_one(mtx, h, w);
  for (std::size_t k = 0; k < a.data.size(); ++k) a.data[k] += m.data[k];
  return a;
}

template <std::floating_point T>
DenseMatrix<T> assemble_circulant(const StencilBank<T>& b, std::size_t h,
                                  std::size_t w) {
  const std::size_t c = b.count();
  detail::check_dense_guard(c, c, h, w);
  DenseMatrix<T> a(c * h * w, c * h * w);
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t q = 0; q < c; ++q)
      detail::place_stencil(a, b.stencil((q + c - r) % c), r, q, h, w);
  return a;
}

// ---------------------------------------------------------------------------
// Type-erased operator used by verification, benchmarking and serialization.

template <std::floating_point T>
class ConvOperator {
 public:
  static ConvOperator fully_coupled(StencilGrid<T> g) {
    ConvOperator op(OpKind::fully_coupled);
    op.grid_ = std::move(g);
    return op;
  }
  static ConvOperator depthwise(StencilBank<T> b,
                                ConvPath path = ConvPath::fft) {
    ConvOperator op(OpKind::depthwise);
    op.bank_ = std::move(b);
    op.path_ = path;
    return op;
  }
  static ConvOperator one_by_one(ChannelMatrix<T> mtx) {
    ConvOperator op(OpKind::one_by_one);
    op.mtx_ = std::move(mtx);
    return op;
  }
  static ConvOperator linear_mix(StencilBank<T> b, ChannelMatrix<T> mtx,
                                 ConvPath path = ConvPath::fft) {
    detail::check_linear_mix("ConvOperator::linear_mix", b, mtx);
    ConvOperator op(OpKind::linear_mix);
    op.bank_ = std::move(b);
    op.mtx_ = std::move(mtx);
    op.path_ = path;
    return op;
  }
  static ConvOperator circulant(StencilBank<T> b) {
    ConvOperator op(OpKind::circulant);
    op.bank_ = std::move(b);
    return op;
  }

  OpKind kind() const noexcept { return kind_; }
  ConvPath path() const noexcept { return path_; }
  const StencilGrid<T>& grid() const noexcept { return grid_; }
  const StencilBank<T>& bank() const noexcept { return bank_; }
  const ChannelMatrix<T>& matrix() const noexcept { return mtx_; }

  std::size_t stencil_size() const noexcept {
    switch (kind_) {
      case OpKind::fully_coupled: return grid_.stencil_size();
      case OpKind::one_by_one: return 1;
      default: return bank_.stencil_size();
    }
  }
  std::size_t in_channels() const noexcept {
    switch (kind_) {
      case OpKind::fully_coupled: return grid_.in_channels();
      case OpKind::one_by_one: return mtx_.cols();
      default: return bank_.count();
    }
  }
  std::size_t out_channels() const noexcept {
    switch (kind_) {
      case OpKind::fully_coupled: return grid_.out_channels();
      case OpKind::one_by_one: return mtx_.rows();
      default: return bank_.count();
    }
  }

  Tensor4<T> apply(const Tensor4<T>& x) const {
    switch (kind_) {
      case OpKind::fully_coupled: return apply_fully_coupled(grid_, x);
      case OpKind::depthwise: return apply_depthwise(bank_, x, path_);
      case OpKind::one_by_one: return apply_one_by_one(mtx_, x);
      case OpKind::linear_mix: return apply_linear_mix(bank_, mtx_, x, path_);
      default: return apply_circulant(bank_, x);
    }
  }

  Tensor4<T> apply_transpose(const Tensor4<T>& y) const {
    switch (kind_) {
      case OpKind::fully_coupled: return apply_fully_coupled_transpose(grid_, y);
      case OpKind::depthwise: return apply_depthwise_transpose(bank_, y, path_);
      case OpKind::one_by_one: return apply_one_by_one_transpose(mtx_, y);
      case OpKind::linear_mix:
        return apply_linear_mix_transpose(bank_, mtx_, y, path_);
      default: return apply_circulant_transpose(bank_, y);
    }
  }

  DenseMatrix<T> assemble(std::size_t h, std::size_t w) const {
    switch (kind_) {
      case OpKind::fully_coupled: return assemble_fully_coupled(grid_, h, w);
      case OpKind::depthwise: return assemble_depthwise(bank_, h, w);
      case OpKind::one_by_one: return assemble_one_by_one(mtx_, h, w);
      case OpKind::linear_mix: return assemble_linear_mix(bank_, mtx_, h, w);
      default: return assemble_circulant(bank_, h, w);
    }
  }

  /// Stored weights in declaration order (bank before matrix).
  std::vector<T> flat_weights() const {
    std::vector<T> out;
    auto add = [&](std::span<const T> s) { out.insert(out.end(), s.begin(), s.end()); };
    switch (kind_) {
      case OpKind::fully_coupled: add(grid_.weights()); break;
      case OpKind::one_by_one: add(mtx_.weights()); break;
      case OpKind::linear_mix:
        add(bank_.weights());
        add(mtx_.weights());
        break;
      default: add(bank_.weights()); break;
    }
    return out;
  }

  void set_flat_weights(std::span<const T> w) {
    detail::check_dim("ConvOperator::set_flat_weights", "weight count",
                      weight_count(), w.size());
    auto take = [&](std::span<T> dst) {
      std::copy_n(w.begin(), dst.size(), dst.begin());
      w = w.subspan(dst.size());
    };
    switch (kind_) {
      case OpKind::fully_coupled: take(grid_.weights()); break;
      case OpKind::one_by_one: take(mtx_.weights()); break;
      case OpKind::linear_mix:
        take(bank_.weights());
        take(mtx_.weights());
        break;
      default: take(bank_.weights()); break;
    }
  }

  std::size_t weight_count() const noexcept {
    switch (kind_) {
      case OpKind::fully_coupled: return grid_.weights().size();
      case OpKind::one_by_one: return mtx_.weights().size();
      case OpKind::linear_mix:
        return bank_.weights().size() + mtx_.weights().size();
      default: return bank_.weights().size();
    }
  }

 private:
  explicit ConvOperator(OpKind k) : kind_(k) {}

  OpKind kind_;
  ConvPath path_ = ConvPath::fft;
  StencilGrid<T> grid_;
  StencilBank<T> bank_;
  ChannelMatrix<T> mtx_;
};

}  // namespace leanconv
