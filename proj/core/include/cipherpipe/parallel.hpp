#pragma once

#include <cstddef>
#include <functional>

namespace cipherpipe {

/// Worker count: CIPHERPIPE_THREADS if set (>= 1), otherwise the hardware
/// concurrency.
unsigned thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Callers write
/// results into per-index slots so output order never depends on scheduling.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cipherpipe
