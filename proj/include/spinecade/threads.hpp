#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace spinecade {

/// Runs fn(begin, end) over a static contiguous partition of [0, n).
/// Partitioning depends only on (n, threads), so results that are combined
/// in worker order are reproducible for a fixed thread count.
template <class Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  const size_t workers =
      std::min<size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    fn(size_t{0}, n);
    return;
  }
  const size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t t = 0; t < workers; ++t) {
    const size_t begin = t * chunk;
    const size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace spinecade
