#pragma once

#include <cstddef>
#include <functional>

namespace agf {

// Worker count: AGF_THREADS when set to a positive integer, capped by the
// hardware concurrency; otherwise the hardware concurrency.
std::size_t thread_count();

// Splits [0, n) into contiguous chunks, one per worker. Runs inline when a
// single worker is available or `work` is below `min_work`. Each index is
// handled by exactly one worker, so results do not depend on the split.
void parallel_for(std::size_t n, std::size_t work, std::size_t min_work,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace agf
