#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace awconv {

// Worker-thread cap from the AWK_THREADS environment variable. Defaults to 1
// so every numeric path runs single-threaded unless explicitly raised.
inline int max_worker_threads() {
  static const int cached = [] {
    const char* env = std::getenv("AWK_THREADS");
    if (env == nullptr) return 1;
    int v = std::atoi(env);
    return v < 1 ? 1 : v;
  }();
  return cached;
}

// Splits [0, n) into contiguous chunks, one worker per chunk. Each index is
// handled by exactly one worker and per-index work keeps its own reduction
// order, so results are bitwise independent of the thread count.
template <class F>
void parallel_for(int64_t n, F&& body) {
  if (n <= 0) return;
  int threads = static_cast<int>(std::min<int64_t>(max_worker_threads(), n));
  if (threads <= 1) {
    body(int64_t{0}, n);
    return;
  }
  const int64_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    const int64_t lo = t * chunk;
    const int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace awconv
