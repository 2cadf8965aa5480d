#pragma once

// Process-level settings for the executables.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace leanconv {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel, so repeated large allocations do not pay fresh page faults each
/// time. Affects the whole process; call once from main.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace leanconv
