#pragma once

#include <cstdint>
#include <functional>

namespace danhar {

// Worker cap for internally parallel primitives. Initialized from the
// DANHAR_THREADS environment variable (default 1).
int thread_count();
void set_thread_count(int threads);

// Runs fn(begin, end) over disjoint chunks of [0, n). Partitioning depends
// only on n and the thread count, and chunks write disjoint outputs, so
// results are bit-identical to the sequential order.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace danhar
