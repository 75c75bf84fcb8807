#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gaitasms {

/// Worker cap from GASMS_THREADS; 0 or unset means sequential.
inline int kernel_threads() {
  static const int n = [] {
    const char* env = std::getenv("GASMS_THREADS");
    if (!env) return 0;
    try {
      return std::max(0, std::stoi(env));
    } catch (...) {
      return 0;
    }
  }();
  return n;
}

/// Runs body(i) for i in [0, count). Callers only hand in iterations that write
/// disjoint memory, so the result does not depend on the worker count.
template <typename Body>
void parallel_for(Eigen::Index count, Body&& body) {
  const int threads = std::min<Eigen::Index>(kernel_threads(), count);
  if (threads <= 1) {
    for (Eigen::Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int k = 0; k < threads; ++k) {
    pool.emplace_back([&, k] {
      for (Eigen::Index i = k; i < count; i += threads) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Training reallocates the same activation sizes every step, and fresh pages
/// fault on first touch.
inline void retain_heap_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace gaitasms
