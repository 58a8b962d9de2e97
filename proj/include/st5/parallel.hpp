#pragma once

#include <cstddef>
#include <functional>

namespace st5 {

// Worker count for data-parallel loops: ST5_THREADS when set to a positive
// integer, otherwise the hardware concurrency (at least 1).
std::size_t configured_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
// exactly once; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace st5
