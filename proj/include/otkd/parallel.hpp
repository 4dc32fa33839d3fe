#pragma once

#include <cstddef>
#include <functional>

namespace otkd {

/// Thread budget: the OTKD_THREADS environment variable when set and > 0,
/// otherwise (0 or unset) the hardware concurrency.
int thread_budget();

/// Runs fn(i) for i in [0, n). Tasks must be independent; results written by
/// index stay in deterministic order regardless of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace otkd
