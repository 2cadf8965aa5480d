#pragma once

// Dense NCHW tensors (W fastest) and the handful of whole-tensor operations
// the layers need.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "leanconv/error.hpp"

namespace leanconv {

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t sample() const noexcept { return c * h * w; }
  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

namespace detail {

inline void check_same_shape(const char* where, const Shape4& a,
                             const Shape4& b) {
  check_dim(where, "batch", a.n, b.n);
  check_dim(where, "channels", a.c, b.c);
  check_dim(where, "height", a.h, b.h);
  check_dim(where, "width", a.w, b.w);
}

/// Eight independent partial sums so the compiler can vectorize; the final
/// combination order is fixed, which keeps results reproducible.
template <std::floating_point T>
struct Lanes {
  T v[8] = {};

  void add_products(const T* a, const T* b, std::size_t n) noexcept {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
      for (std::size_t k = 0; k < 8; ++k) v[k] += a[j + k] * b[j + k];
    for (; j < n; ++j) v[j - (n & ~std::size_t{7})] += a[j] * b[j];
  }
  void add(const T* a, std::size_t n) noexcept {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
      for (std::size_t k = 0; k < 8; ++k) v[k] += a[j + k];
    for (; j < n; ++j) v[j - (n & ~std::size_t{7})] += a[j];
  }
  T total() const noexcept {
    return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
  }
};

}  // namespace detail

template <std::floating_point T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0))
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor4(Shape4 shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    detail::check_dim("Tensor4", "data length", shape_.size(), data_.size());
  }
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
      : Tensor4(Shape4{n, c, h, w}) {}

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t batch() const noexcept { return shape_.n; }
  std::size_t channels() const noexcept { return shape_.c; }
  std::size_t height() const noexcept { return shape_.h; }
  std::size_t width() const noexcept { return shape_.w; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t i,
                    std::size_t j) const noexcept {
    return ((n * shape_.c + c) * shape_.h + i) * shape_.w + j;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t i,
                std::size_t j) noexcept {
    return data_[index(n, c, i, j)];
  }
  T operator()(std::size_t n, std::size_t c, std::size_t i,
               std::size_t j) const noexcept {
    return data_[index(n, c, i, j)];
  }
  T& operator[](std::size_t k) noexcept { return data_[k]; }
  T operator[](std::size_t k) const noexcept { return data_[k]; }

  std::span<T> plane(std::size_t n, std::size_t c) noexcept {
    return std::span<T>(data_).subspan((n * shape_.c + c) * shape_.plane(),
                                       shape_.plane());
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const noexcept {
    return std::span<const T>(data_).subspan(
        (n * shape_.c + c) * shape_.plane(), shape_.plane());
  }
  std::span<T> sample(std::size_t n) noexcept {
    return std::span<T>(data_).subspan(n * shape_.sample(), shape_.sample());
  }
  std::span<const T> sample(std::size_t n) const noexcept {
    return std::span<const T>(data_).subspan(n * shape_.sample(),
                                             shape_.sample());
  }

  /// Same data, new shape with an equal element count.
  Tensor4 reshaped(Shape4 shape) const {
    detail::check_dim("Tensor4::reshaped", "element count", data_.size(),
                      shape.size());
    return Tensor4(shape, data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor4& operator+=(const Tensor4& o) {
    detail::check_same_shape("Tensor4::operator+=", shape_, o.shape_);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Tensor4& operator-=(const Tensor4& o) {
    detail::check_same_shape("Tensor4::operator-=", shape_, o.shape_);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Tensor4& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  /// this += s * o
  Tensor4& axpy(T s, const Tensor4& o) {
    detail::check_same_shape("Tensor4::axpy", shape_, o.shape_);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += s * o.data_[k];
    return *this;
  }

  friend Tensor4 operator+(Tensor4 a, const Tensor4& b) { return a += b; }
  friend Tensor4 operator-(Tensor4 a, const Tensor4& b) { return a -= b; }
  friend Tensor4 operator*(T s, Tensor4 a) { return a *= s; }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

/// Complex companion of Tensor4. Storage is interleaved (std::complex);
/// serialized element by element as real part then imaginary part.
template <std::floating_point T>
class ComplexTensor4 {
 public:
  ComplexTensor4() = default;
  explicit ComplexTensor4(Shape4 shape)
      : shape_(shape), data_(shape.size()) {}

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<std::complex<T>> data() noexcept { return data_; }
  std::span<const std::complex<T>> data() const noexcept { return data_; }
  std::complex<T>& operator()(std::size_t n, std::size_t c, std::size_t i,
                              std::size_t j) noexcept {
    return data_[((n * shape_.c + c) * shape_.h + i) * shape_.w + j];
  }
  const std::complex<T>& operator()(std::size_t n, std::size_t c,
                                    std::size_t i,
                                    std::size_t j) const noexcept {
    return data_[((n * shape_.c + c) * shape_.h + i) * shape_.w + j];
  }

 private:
  Shape4 shape_{};
  std::vector<std::complex<T>> data_;
};

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <std::floating_point T, class F>
Tensor4<T> elementwise_map(const Tensor4<T>& x, F&& f) {
  Tensor4<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = f(src[k]);
  return out;
}

template <std::floating_point T>
Tensor4<T> relu(const Tensor4<T>& x) {
  return elementwise_map(x, [](T v) { return v > T(0) ? v : T(0); });
}

/// Per-(batch, channel) spatial mean, returned as an (N, c, 1, 1) tensor.
template <std::floating_point T>
Tensor4<T> channel_reduce_mean(const Tensor4<T>& x) {
  const auto& s = x.shape();
  if (s.plane() == 0) throw Error("channel_reduce_mean: empty spatial extent");
  Tensor4<T> out(Shape4{s.n, s.c, 1, 1});
  const T scale = T(1) / static_cast<T>(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      T acc = 0;
      for (T v : x.plane(n, c)) acc += v;
      out(n, c, 0, 0) = acc * scale;
    }
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  detail::check_dim("concat_channels", "batch", sa.n, sb.n);
  detail::check_dim("concat_channels", "height", sa.h, sb.h);
  detail::check_dim("concat_channels", "width", sa.w, sb.w);
  Tensor4<T> out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (std::size_t n = 0; n < sa.n; ++n) {
    auto dst = out.sample(n);
    std::copy_n(a.sample(n).begin(), sa.sample(), dst.begin());
    std::copy_n(b.sample(n).begin(), sb.sample(), dst.begin() + sa.sample());
  }
  return out;
}

/// Channels [first, first + count) of x.
template <std::floating_point T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::size_t first,
                          std::size_t count) {
  const auto& s = x.shape();
  if (first + count > s.c) {
    throw ShapeError("slice_channels", "channel range end", s.c, first + count);
  }
  Tensor4<T> out(Shape4{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = x.sample(n).subspan(first * s.plane(), count * s.plane());
    std::copy(src.begin(), src.end(), out.sample(n).begin());
  }
  return out;
}

template <std::floating_point T>
T dot(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::check_same_shape("dot", a.shape(), b.shape());
  T acc = 0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

template <std::floating_point T>
T norm2(const Tensor4<T>& a) {
  return std::sqrt(dot(a, a));
}

template <std::floating_point T>
bool all_finite(const Tensor4<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(),
                     [](T v) { return std::isfinite(v); });
}

/// ||a - b|| / max(||b||, tiny)
template <std::floating_point T>
T relative_error(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::check_same_shape("relative_error", a.shape(), b.shape());
  T num = 0, den = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a[k] - b[k]) * (a[k] - b[k]);
    den += b[k] * b[k];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), T(1e-300));
}

// ---------------------------------------------------------------------------
// Binary dump: four little-endian u32 (N, c, H, W), then f64 LE data.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int k = 0; k < 8; ++k)
    b[k] = static_cast<unsigned char>(bits >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error("tensor dump: truncated header");
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= std::uint32_t(b[k]) << (8 * k);
  return v;
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw Error("binary stream: truncated f64 data");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= std::uint64_t(b[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

template <std::floating_point T>
void write_tensor(std::ostream& os, const Tensor4<T>& t) {
  const auto& s = t.shape();
  for (auto d : {s.n, s.c, s.h, s.w})
    detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (T v : t.data()) detail::put_f64(os, static_cast<double>(v));
}

template <std::floating_point T = double>
Tensor4<T> read_tensor(std::istream& is) {
  Shape4 s;
  s.n = detail::get_u32(is);
  s.c = detail::get_u32(is);
  s.h = detail::get_u32(is);
  s.w = detail::get_u32(is);
  Tensor4<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(detail::get_f64(is));
  return t;
}

template <std::floating_point T>
void save_tensor(const std::string& path, const Tensor4<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_tensor(os, t);
}

template <std::floating_point T = double>
Tensor4<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_tensor<T>(is);
}

}  // namespace leanconv
