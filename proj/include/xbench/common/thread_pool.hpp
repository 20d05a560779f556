#pragma once

#include <cstddef>
#include <functional>

namespace xbench {

// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
// concurrency). The first exception thrown by any task is rethrown on the
// calling thread after all workers stop.
void parallel_for(size_t n, unsigned workers, const std::function<void(size_t)>& fn);

unsigned default_workers();

}  // namespace xbench
