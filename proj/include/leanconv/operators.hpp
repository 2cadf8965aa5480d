#pragma once

// Weight containers for the convolution parameterizations: single stencils,
// per-channel stencil banks, full c_out x c_in stencil grids and 1x1 channel
// matrices.

#include <algorithm>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "leanconv/error.hpp"

namespace leanconv {

namespace detail {

inline void check_odd_stencil(const char* where, std::size_t m) {
  if (m == 0 || m % 2 == 0)
    throw Error(std::string(where) + ": stencil size must be odd, got " +
                std::to_string(m));
}

}  // namespace detail

/// Read-only view of one m x m stencil (row-major taps). Tap (a, b) couples
/// output pixel (i, j) to input pixel (i + a - m/2, j + b - m/2).
template <std::floating_point T>
struct StencilView {
  std::size_t m = 0;
  std::span<const T> taps;

  T at(std::size_t a, std::size_t b) const noexcept { return taps[a * m + b]; }
  std::ptrdiff_t radius() const noexcept {
    return static_cast<std::ptrdiff_t>(m / 2);
  }
};

template <std::floating_point T>
class Stencil {
 public:
  Stencil() = default;
  explicit Stencil(std::size_t m) : m_(m), taps_(m * m, T(0)) {
    detail::check_odd_stencil("Stencil", m);
  }
  Stencil(std::size_t m, std::vector<T> taps) : m_(m), taps_(std::move(taps)) {
    detail::check_odd_stencil("Stencil", m);
    detail::check_dim("Stencil", "tap count", m * m, taps_.size());
  }

  /// Center tap one, everything else zero: the identity operator.
  static Stencil delta(std::size_t m) {
    Stencil s(m);
    s.at(m / 2, m / 2) = T(1);
    return s;
  }

  std::size_t size() const noexcept { return m_; }
  T& at(std::size_t a, std::size_t b) noexcept { return taps_[a * m_ + b]; }
  T at(std::size_t a, std::size_t b) const noexcept {
    return taps_[a * m_ + b];
  }
  std::span<T> taps() noexcept { return taps_; }
  std::span<const T> taps() const noexcept { return taps_; }
  StencilView<T> view() const noexcept { return {m_, taps_}; }
  operator StencilView<T>() const noexcept { return view(); }

  /// 180-degree rotation; the stencil of the transposed operator.
  Stencil flipped() const {
    Stencil out(m_);
    for (std::size_t a = 0; a < m_; ++a)
      for (std::size_t b = 0; b < m_; ++b)
        out.at(a, b) = at(m_ - 1 - a, m_ - 1 - b);
    return out;
  }

 private:
  std::size_t m_ = 0;
  std::vector<T> taps_;
};

/// c stencils of equal size, stored channel-major then row-major. Used both
/// as the block diagonal of a depth-wise operator and as the generators of a
/// block-circulant operator.
template <std::floating_point T>
class StencilBank {
 public:
  StencilBank() = default;
  StencilBank(std::size_t m, std::size_t count)
      : m_(m), count_(count), taps_(m * m * count, T(0)) {
    detail::check_odd_stencil("StencilBank", m);
  }
  StencilBank(std::size_t m, std::size_t count, std::vector<T> taps)
      : m_(m), count_(count), taps_(std::move(taps)) {
    detail::check_odd_stencil("StencilBank", m);
    detail::check_dim("StencilBank", "tap count", m * m * count, taps_.size());
  }

  static StencilBank deltas(std::size_t m, std::size_t count) {
    StencilBank b(m, count);
    for (std::size_t k = 0; k < count; ++k) b.at(k, m / 2, m / 2) = T(1);
    return b;
  }

  std::size_t stencil_size() const noexcept { return m_; }
  std::size_t count() const noexcept { return count_; }

  StencilView<T> stencil(std::size_t k) const noexcept {
    return {m_, std::span<const T>(taps_).subspan(k * m_ * m_, m_ * m_)};
  }
  std::span<T> stencil_taps(std::size_t k) noexcept {
    return std::span<T>(taps_).subspan(k * m_ * m_, m_ * m_);
  }
  T& at(std::size_t k, std::size_t a, std::size_t b) noexcept {
    return taps_[(k * m_ + a) * m_ + b];
  }
  T at(std::size_t k, std::size_t a, std::size_t b) const noexcept {
    return taps_[(k * m_ + a) * m_ + b];
  }
  void set(std::size_t k, const Stencil<T>& s) {
    detail::check_dim("StencilBank::set", "stencil size", m_, s.size());
    std::copy(s.taps().begin(), s.taps().end(), stencil_taps(k).begin());
  }

  std::span<T> weights() noexcept { return taps_; }
  std::span<const T> weights() const noexcept { return taps_; }

 private:
  std::size_t m_ = 0;
  std::size_t count_ = 0;
  std::vector<T> taps_;
};

/// c_out x c_in grid of stencils, (r, q) row-major, then taps row-major.
template <std::floating_point T>
class StencilGrid {
 public:
  StencilGrid() = default;
  StencilGrid(std::size_t m, std::size_t c_out, std::size_t c_in)
      : m_(m), c_out_(c_out), c_in_(c_in), taps_(m * m * c_out * c_in, T(0)) {
    detail::check_odd_stencil("StencilGrid", m);
  }

  /// Deltas on the diagonal (r == q), zeros elsewhere.
  static StencilGrid identity(std::size_t m, std::size_t c_out,
                              std::size_t c_in) {
    StencilGrid g(m, c_out, c_in);
    for (std::size_t r = 0; r < std::min(c_out, c_in); ++r)
      g.at(r, r, m / 2, m / 2) = T(1);
    return g;
  }

  std::size_t stencil_size() const noexcept { return m_; }
  std::size_t out_channels() const noexcept { return c_out_; }
  std::size_t in_channels() const noexcept { return c_in_; }

  StencilView<T> stencil(std::size_t r, std::size_t q) const noexcept {
    return {m_, std::span<const T>(taps_).subspan((r * c_in_ + q) * m_ * m_,
                                                  m_ * m_)};
  }
  std::span<T> stencil_taps(std::size_t r, std::size_t q) noexcept {
    return std::span<T>(taps_).subspan((r * c_in_ + q) * m_ * m_, m_ * m_);
  }
  T& at(std::size_t r, std::size_t q, std::size_t a, std::size_t b) noexcept {
    return taps_[((r * c_in_ + q) * m_ + a) * m_ + b];
  }
  T at(std::size_t r, std::size_t q, std::size_t a,
       std::size_t b) const noexcept {
    return taps_[((r * c_in_ + q) * m_ + a) * m_ + b];
  }

  std::span<T> weights() noexcept { return taps_; }
  std::span<const T> weights() const noexcept { return taps_; }

 private:
  std::size_t m_ = 0;
  std::size_t c_out_ = 0;
  std::size_t c_in_ = 0;
  std::vector<T> taps_;
};

/// c_out x c_in matrix of the 1x1 operator, stored column-major.
template <std::floating_point T>
class ChannelMatrix {
 public:
  ChannelMatrix() = default;
  ChannelMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, T(0)) {}
  ChannelMatrix(std::size_t rows, std::size_t cols, std::vector<T> col_major)
      : rows_(rows), cols_(cols), data_(std::move(col_major)) {
    detail::check_dim("ChannelMatrix", "entry count", rows * cols,
                      data_.size());
  }

  static ChannelMatrix identity(std::size_t c) {
    ChannelMatrix mtx(c, c);
    for (std::size_t k = 0; k < c; ++k) mtx(k, k) = T(1);
    return mtx;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  T& operator()(std::size_t r, std::size_t q) noexcept {
    return data_[q * rows_ + r];
  }
  T operator()(std::size_t r, std::size_t q) const noexcept {
    return data_[q * rows_ + r];
  }

  ChannelMatrix transposed() const {
    ChannelMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t q = 0; q < cols_; ++q) out(q, r) = (*this)(r, q);
    return out;
  }

  std::span<T> weights() noexcept { return data_; }
  std::span<const T> weights() const noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace leanconv
