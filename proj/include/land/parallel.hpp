#pragma once

#include <cstddef>
#include <functional>

namespace land {

// Worker count from LAND_THREADS, else the hardware concurrency (>= 1).
int default_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// processed exactly once; results must be written to per-index slots so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace land
