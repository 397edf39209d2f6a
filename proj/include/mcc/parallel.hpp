#pragma once

#include <cstddef>
#include <functional>

namespace mcc {

// Worker cap: MCC_THREADS env var (0 = sequential), else hardware count.
std::size_t worker_count();

// Splits [0, n) into contiguous chunks, one per worker. Each index is
// processed by exactly one thread, so any per-index computation whose inner
// reductions are sequential stays bit-deterministic regardless of the worker
// count. `grain` is the minimum index count worth a thread.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace mcc
