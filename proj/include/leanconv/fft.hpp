#pragma once

// Thin FFTW3 wrapper: in-place complex transforms of rank 1-3 and real 2-D
// transforms on the half spectrum, with a process-wide plan cache. Forward
// is unnormalized; inverse here is the raw backward transform (callers scale
// by 1/size).

#include <fftw3.h>

#include <array>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <new>
#include <span>
#include <vector>

#include "leanconv/error.hpp"

namespace leanconv::fft {

using cplx = std::complex<double>;

enum class Direction { forward, backward };

/// SIMD-aligned storage from fftw_malloc, so every buffer hits the same
/// plan and the vectorized codelets.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    if (auto* p = fftw_malloc(n * sizeof(T))) return static_cast<T*>(p);
    throw std::bad_alloc();
  }
  void deallocate(T* p, std::size_t) noexcept { fftw_free(p); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using AlignedComplex = std::vector<cplx, AlignedAllocator<cplx>>;

namespace detail {

enum class PlanKind { complex, real_forward, real_backward };

struct PlanKey {
  std::array<int, 3> dims{};
  int rank = 0;
  int sign = 0;
  int alignment = 0;
  int out_alignment = 0;
  PlanKind kind = PlanKind::complex;
  friend auto operator<=>(const PlanKey&, const PlanKey&) = default;
};

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  // Plans are created under the lock; fftw_execute_dft on distinct arrays is
  // thread-safe once a plan exists.
  fftw_plan get(const PlanKey& key) {
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::size_t total = 1;
    for (int d = 0; d < key.rank; ++d) total *= static_cast<std::size_t>(key.dims[d]);
    // Two buffers large enough for either layout, shifted so their alignment
    // classes match the caller's arrays.
    const std::size_t bytes = sizeof(fftw_complex) * (total + 2) + 64;
    auto* scratch = static_cast<char*>(fftw_malloc(2 * bytes));
    char* a = scratch + key.alignment;
    char* b = scratch + bytes + key.out_alignment;
    fftw_plan plan = nullptr;
    switch (key.kind) {
      case PlanKind::complex: {
        auto* base = reinterpret_cast<fftw_complex*>(a);
        plan = fftw_plan_dft(key.rank, key.dims.data(), base, base, key.sign, FFTW_ESTIMATE);
        break;
      }
      case PlanKind::real_forward:
        plan = fftw_plan_dft_r2c(key.rank, key.dims.data(), reinterpret_cast<double*>(a),
                                 reinterpret_cast<fftw_complex*>(b), FFTW_ESTIMATE);
        break;
      case PlanKind::real_backward:
        plan = fftw_plan_dft_c2r(key.rank, key.dims.data(), reinterpret_cast<fftw_complex*>(a),
                                 reinterpret_cast<double*>(b), FFTW_ESTIMATE);
        break;
    }
    fftw_free(scratch);
    if (!plan) throw Error("fft: FFTW failed to create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  PlanCache() = default;
  std::mutex mutex_;
  std::map<PlanKey, fftw_plan> plans_;
};

}  // namespace detail

/// In-place unnormalized DFT over a row-major array with the given extents
/// (last extent fastest).
inline void transform(std::span<cplx> data, std::span<const std::size_t> dims,
                      Direction dir) {
  if (dims.empty() || dims.size() > 3)
    throw Error("fft: rank must be 1, 2 or 3");
  detail::PlanKey key;
  key.rank = static_cast<int>(dims.size());
  std::size_t total = 1;
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (dims[d] == 0) throw Error("fft: zero extent");
    key.dims[d] = static_cast<int>(dims[d]);
    total *= dims[d];
  }
  leanconv::detail::check_dim("fft::transform", "element count", total,
                              data.size());
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  key.sign = dir == Direction::forward ? FFTW_FORWARD : FFTW_BACKWARD;
  key.alignment = fftw_alignment_of(reinterpret_cast<double*>(ptr));
  fftw_plan plan = detail::PlanCache::instance().get(key);
  fftw_execute_dft(plan, ptr, ptr);
}

/// Real-to-complex 2-D DFT of an h x w plane into its h x (w/2 + 1) half
/// spectrum.
inline void real_forward2(std::span<const double> in, std::span<cplx> out, std::size_t h,
                          std::size_t w) {
  leanconv::detail::check_dim("fft::real_forward2", "input size", h * w, in.size());
  leanconv::detail::check_dim("fft::real_forward2", "output size", h * (w / 2 + 1), out.size());
  detail::PlanKey key;
  key.rank = 2;
  key.dims = {static_cast<int>(h), static_cast<int>(w), 0};
  key.kind = detail::PlanKind::real_forward;
  // FFTW does not modify the input of an out-of-place r2c transform.
  auto* src = const_cast<double*>(in.data());
  auto* dst = reinterpret_cast<fftw_complex*>(out.data());
  key.alignment = fftw_alignment_of(src);
  key.out_alignment = fftw_alignment_of(reinterpret_cast<double*>(dst));
  fftw_execute_dft_r2c(detail::PlanCache::instance().get(key), src, dst);
}

/// Inverse of real_forward2 (unnormalized). The half spectrum is
/// overwritten.
inline void real_backward2(std::span<cplx> in, std::span<double> out, std::size_t h,
                           std::size_t w) {
  leanconv::detail::check_dim("fft::real_backward2", "input size", h * (w / 2 + 1), in.size());
  leanconv::detail::check_dim("fft::real_backward2", "output size", h * w, out.size());
  detail::PlanKey key;
  key.rank = 2;
  key.dims = {static_cast<int>(h), static_cast<int>(w), 0};
  key.kind = detail::PlanKind::real_backward;
  auto* src = reinterpret_cast<fftw_complex*>(in.data());
  key.alignment = fftw_alignment_of(reinterpret_cast<double*>(src));
  key.out_alignment = fftw_alignment_of(out.data());
  fftw_execute_dft_c2r(detail::PlanCache::instance().get(key), src, out.data());
}

inline void transform2(std::span<cplx> data, std::size_t h, std::size_t w,
                       Direction dir) {
  const std::array<std::size_t, 2> dims{h, w};
  transform(data, dims, dir);
}

inline void transform3(std::span<cplx> data, std::size_t c, std::size_t h,
                       std::size_t w, Direction dir) {
  const std::array<std::size_t, 3> dims{c, h, w};
  transform(data, dims, dir);
}

}  // namespace leanconv::fft
