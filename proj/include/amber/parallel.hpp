#pragma once

#include <cstdint>
#include <functional>

namespace amber {

/// Worker cap: AMBER_THREADS if set and positive, else hardware concurrency.
int max_threads();

/// Runs fn(i) for i in [0, n). Each index must write a disjoint output region,
/// so the result does not depend on how indices are spread over threads.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace amber
