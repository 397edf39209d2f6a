#include "mcc/parallel.hpp"

#include <cstdlib>
#include <thread>
#include <vector>

namespace mcc {

std::size_t worker_count() {
    static const std::size_t cached = [] {
        if (const char* env = std::getenv("MCC_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v <= 0) return std::size_t{1};
            return static_cast<std::size_t>(v);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? std::size_t{1} : static_cast<std::size_t>(hw);
    }();
    return cached;
}

void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    const std::size_t workers = worker_count();
    if (n == 0) return;
    if (workers <= 1 || n < 2 * grain) {
        body(0, n);
        return;
    }
    std::size_t chunks = workers;
    if (chunks > n / grain) chunks = n / grain;
    if (chunks < 2) {
        body(0, n);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(chunks - 1);
    const std::size_t per = (n + chunks - 1) / chunks;
    for (std::size_t c = 1; c < chunks; ++c) {
        const std::size_t lo = c * per;
        const std::size_t hi = std::min(n, lo + per);
        if (lo >= hi) break;
        threads.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(0, std::min(per, n));
    for (auto& t : threads) t.join();
}

}  // namespace mcc
