#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace carfield {

// Resolve a --threads request: 0 means "use hardware concurrency".
inline int effective_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Split [0, n) into exactly `threads` contiguous chunks and run fn(begin,
// end, chunk_index) on each. Chunk boundaries depend only on (n, threads),
// so any reduction done in chunk order is deterministic for a fixed thread
// count. threads <= 1 runs inline.
inline void parallel_for_chunks(
    int64_t n, int threads,
    const std::function<void(int64_t, int64_t, int)>& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    fn(0, n, 0);
    return;
  }
  if (threads > n) threads = static_cast<int>(n);
  const int64_t base = n / threads;
  const int64_t rem = n % threads;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(threads) - 1);
  int64_t begin = 0;
  for (int c = 0; c < threads; ++c) {
    int64_t len = base + (c < rem ? 1 : 0);
    int64_t end = begin + len;
    if (c + 1 == threads) {
      fn(begin, end, c);  // last chunk on the calling thread
    } else {
      workers.emplace_back([&fn, begin, end, c] { fn(begin, end, c); });
    }
    begin = end;
  }
  for (auto& w : workers) w.join();
}

}  // namespace carfield
