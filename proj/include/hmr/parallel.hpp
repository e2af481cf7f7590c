#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace hmr {

// Splits [0, count) into at most `threads` contiguous chunks and runs
// fn(begin, end, chunk_index) on each. Chunk boundaries depend only on
// (count, threads), so per-chunk accumulators reduced in chunk order give
// bit-identical results no matter how the threads are scheduled.
template <typename Fn>
void parallel_chunks(std::size_t count, int threads, Fn&& fn) {
  if (count == 0) return;
  const std::size_t n_chunks =
      (threads <= 1) ? 1 : std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  if (n_chunks == 1) {
    fn(std::size_t{0}, count, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(n_chunks);
  const std::size_t base = count / n_chunks, extra = count % n_chunks;
  std::size_t begin = 0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    pool.emplace_back([&fn, begin, len, c] { fn(begin, begin + len, c); });
    begin += len;
  }
  for (auto& t : pool) t.join();
}

inline int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace hmr
