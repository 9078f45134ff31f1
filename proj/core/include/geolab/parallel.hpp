#pragma once

#include <cstdint>
#include <functional>

namespace geolab {

// Worker cap: min(hardware_concurrency, $GEOLAB_THREADS if set). Always >= 1.
int max_threads();

// Runs fn(i) for i in [0, n). Work items must be independent; results must be
// written to disjoint locations so the outcome is identical to a serial run.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace geolab
