#pragma once

#include <functional>

#include "levyctpe/types.hpp"

namespace levyctpe {

// Worker count: LEVY_CTPE_THREADS if set (>= 1), else hardware concurrency.
int max_threads();

// Runs fn(i) for i in [0, n).  Work items must write only to disjoint
// per-index slots; reductions happen sequentially afterwards, so results
// never depend on the thread count.  Blocks until all items finish and
// rethrows the first exception raised by any item.
void parallel_for(Index n, const std::function<void(Index)>& fn);

}  // namespace levyctpe
