#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vpdr {

// Evaluates fn(i) for i in [0, n) on up to n_threads workers and returns the
// results in index order, so reductions over the output are bit-stable
// regardless of thread count.
template <class R, class F>
std::vector<R> parallel_map(std::size_t n, int n_threads, F&& fn) {
    std::vector<R> out(n);
    if (n == 0) return out;
    const std::size_t workers =
        std::min<std::size_t>(n, n_threads > 1 ? static_cast<std::size_t>(n_threads) : 1);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                out[i] = fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
    return out;
}

} // namespace vpdr
