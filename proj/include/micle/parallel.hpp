#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace micle {

// Worker cap: MICLE_THREADS env var, default = hardware concurrency.
// MICLE_THREADS=1 forces the sequential reference path.
inline int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("MICLE_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}

// Below this many scalar operations the spawn overhead dominates.
constexpr std::uint64_t kMinParallelWork = 250000;

// Static range split over [0, n). Every index is processed by exactly one
// worker and each worker walks its range in order, so results are identical
// for any thread count as long as per-index work is independent. work_hint
// estimates total scalar ops; small jobs and nested calls run serially.
inline void parallel_for(std::size_t n, std::uint64_t work_hint,
                         const std::function<void(std::size_t, std::size_t)>& body) {
    const int cap = max_threads();
    const int nt = static_cast<int>(std::min<std::size_t>(cap, n == 0 ? 1 : n));
    if (nt <= 1 || n < 2 || in_parallel_region() || work_hint < kMinParallelWork) {
        body(0, n);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(nt);
    const std::size_t chunk = (n + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
        const std::size_t lo = std::min(n, static_cast<std::size_t>(t) * chunk);
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&body, lo, hi] {
            in_parallel_region() = true;
            body(lo, hi);
            in_parallel_region() = false;
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace micle
