#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace mixlab {

/// Number of worker threads (set once by the CLI; defaults to hardware).
int& thread_count();

/// Runs fn(chunk_begin, chunk_end) over [0,n) split into a fixed number of
/// chunks that workers pull from a shared counter. The chunk layout does not
/// depend on the thread count, so per-chunk results merged in chunk order are
/// bit-identical for any --threads value. fn must only write to disjoint
/// per-index or per-chunk storage.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Fixed chunk count used by parallel_chunks.
constexpr std::size_t kParallelChunks = 256;

}  // namespace mixlab
