#pragma once

#include <cstddef>
#include <functional>

namespace l2l {

// Worker count from the L2L_WORKERS environment variable (default 1).
std::size_t worker_count();

// Calls fn(i) for i in [0, n) on up to worker_count() threads. Each index is
// handled exactly once; callers write results into per-index slots so the
// outcome does not depend on scheduling. The first exception thrown by any
// task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace l2l
