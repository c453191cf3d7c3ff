#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace cadenza {

/// Index-parallel loop. Work item i writes only to slot i of its output, so
/// results are identical for any worker count.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t w = 0; w < n_threads; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += n_threads) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace cadenza
