#pragma once

#include <cstddef>
#include <functional>

namespace opnet {

/// Worker cap: `OPNET_THREADS` when set to a positive integer, otherwise the
/// hardware concurrency.
std::size_t max_threads();

/// Runs `body(i)` for i in [0, n) across up to `max_threads()` workers.
///
/// Each index must write a disjoint part of the output so the result is
/// bit-identical to a sequential loop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace opnet
