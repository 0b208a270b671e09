#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace cyclelab {

inline std::atomic<int>& worker_budget_ref() {
    static std::atomic<int> n{1};
    return n;
}

inline void set_worker_threads(int n) {
    worker_budget_ref().store(n < 1 ? 1 : n);
}

inline int worker_threads() { return worker_budget_ref().load(); }

/*
 * Fork-join over [0, n). Chunks are contiguous and assigned by index, so
 * results never depend on the worker budget as long as writes are disjoint.
 */
template <class F>
void parallel_for(std::size_t n, F&& body) {
    const int nw = std::min<std::size_t>(worker_threads(), n ? n : 1);
    if (nw <= 1 || n < 1024) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + nw - 1) / nw;
    for (int w = 0; w < nw; ++w) {
        const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace cyclelab
