#pragma once

#include <cstddef>
#include <functional>

namespace mtca {

// Worker cap: MTCA_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) over contiguous index blocks, one per worker.
// Callers write results into per-index slots so output never depends on the
// worker count. The exception from the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mtca
