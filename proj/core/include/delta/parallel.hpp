#pragma once

#include <cstddef>
#include <functional>

namespace delta {

/// Worker count: `DELTA_OPT_THREADS` when set to a positive integer, else the hardware concurrency.
std::size_t thread_count();

/** Runs `body(i)` for every i in [0, n) on up to `thread_count()` threads. Results must be written to per-index
 * slots; the first exception by index is rethrown after all workers finish. */
void parallel_for(std::size_t n, const std::function<void(std::size_t)> & body);

}
