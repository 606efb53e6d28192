#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rigrefine {

// Runs fn(chunk_index, begin, end) over [0, n) split into fixed-size chunks.
// The chunk layout depends only on n and chunk_size, never on the thread
// count, so per-chunk outputs reduced in chunk order give results that are
// bit-identical at any thread count.
inline void parallel_chunks(std::size_t n, std::size_t chunk_size, int threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  if (chunk_size == 0) chunk_size = 1;
  const std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;
  const int n_workers =
      std::max(1, std::min<int>(threads, static_cast<int>(n_chunks)));

  if (n_workers == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_workers));
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Elementwise map over [0, n); safe to parallelize at any granularity because
// no element is touched twice.
inline void parallel_for_each(std::size_t n, int threads,
                              const std::function<void(std::size_t)>& fn) {
  const std::size_t chunk = std::max<std::size_t>(1, n / (4 * std::max(1, threads)));
  parallel_chunks(n, chunk, threads, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace rigrefine
