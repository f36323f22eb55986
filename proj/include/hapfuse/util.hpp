#pragma once

#include <functional>

namespace hapfuse {

/// Worker count: hardware concurrency capped by the HAPFUSE_THREADS
/// environment variable (when set and positive).
int worker_count();

/// Runs fn(i) for i in [0, n). Work items must write only to their own
/// slots; results are then order-independent and runs stay deterministic.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace hapfuse
