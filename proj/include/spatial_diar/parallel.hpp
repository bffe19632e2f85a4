#pragma once

#include <cstddef>
#include <functional>

namespace spatial_diar {

// Worker count: hardware concurrency, capped by SPATIAL_DIAR_THREADS when set.
int worker_count();

// Runs fn(i) for i in [0, n) over contiguous chunks, one chunk per worker.
// Callers must only write to per-index state so results do not depend on the
// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace spatial_diar
