#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ote {

// Runs fn(i) for i in [0, n) across up to `threads` workers. Work is handed
// out as dynamically claimed blocks, so it only suits bodies whose outputs
// are indexed by i (no shared mutation): results are then identical to the
// serial order no matter the thread count.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn,
                         std::size_t block = 16) {
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(threads), (n + block - 1) / block);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            try {
                for (;;) {
                    const std::size_t start = next.fetch_add(block);
                    if (start >= n) return;
                    const std::size_t stop = std::min(n, start + block);
                    for (std::size_t i = start; i < stop; ++i) fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                next.store(n);
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

} // namespace ote
