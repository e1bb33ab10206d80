#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace augsearch {

/// Runs fn(i) for i in [0, n) on up to `workers` threads, in contiguous
/// blocks. fn must only write state owned by index i. The first exception
/// thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const auto threads = static_cast<std::size_t>(std::max(1, workers));
    if (threads == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t used = std::min(threads, n);
    std::vector<std::exception_ptr> errors(used);
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (std::size_t t = 0; t < used; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t * n / used; i < (t + 1) * n / used; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace augsearch
