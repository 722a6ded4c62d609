#include "mixlab/parallel.hpp"

#include <algorithm>

namespace mixlab {

int& thread_count() {
  static int n = int(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t chunks = std::min(kParallelChunks, n);
  const int workers = std::max(1, std::min<int>(thread_count(), int(chunks)));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      std::size_t b = c * n / chunks, e = (c + 1) * n / chunks;
      fn(c, b, e);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      std::size_t b = c * n / chunks, e = (c + 1) * n / chunks;
      fn(c, b, e);
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
}

}  // namespace mixlab
