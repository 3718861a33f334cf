#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace trajmix {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Results must be
/// written to disjoint slots; any reduction over them belongs to the caller,
/// in index order, so numeric output is independent of the worker count.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    if (workers < 1) workers = 1;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (std::size_t i = t; i < count; i += n_threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace trajmix
