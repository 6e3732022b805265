#pragma once

#include <cstddef>
#include <functional>

namespace create {

/// Worker cap for batch-parallel evaluation: hardware concurrency, clipped by
/// the CREATE_MAX_THREADS environment variable when set.
std::size_t max_eval_threads();

/// Runs fn(chunk_index, begin, end) over [0, count) cut into fixed chunks.
/// Chunk boundaries are independent of the thread count, so any per-chunk
/// results assembled by index are deterministic.
void parallel_chunks(std::size_t count, std::size_t chunk_size,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace create
