#pragma once

#include <cstddef>
#include <functional>

namespace tabsage {

// Worker threads to use: TABSAGE_THREADS when set to a positive integer,
// otherwise the hardware concurrency (at least 1).
std::size_t worker_count();

// Runs body(i) for i in [0, count) on up to `workers` threads. Work items are
// independent; the first exception thrown is rethrown after all threads join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body, std::size_t workers = worker_count());

}  // namespace tabsage
