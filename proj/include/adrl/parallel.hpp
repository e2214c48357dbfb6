#pragma once

#include <cstddef>
#include <functional>

namespace adrl {

/// Worker count: `requested` if positive, else ADRL_THREADS if set, else the hardware
/// concurrency; ADRL_THREADS also caps an explicit request.
int worker_count(int requested = 0);

/// Calls fn(i) for i in [0, n) on up to `workers` threads. The first exception thrown by
/// any call is rethrown after all workers finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace adrl
