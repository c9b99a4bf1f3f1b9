#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "endx/common.hpp"

namespace endx {

/// Worker cap for data-parallel evaluation: ENDX_THREADS when set (≥1),
/// otherwise the logical core count.
inline int thread_budget() {
    if (const char* env = std::getenv("ENDX_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            fail(std::string("ENDX_THREADS: '") + env +
                 "' is not a positive integer");
        return static_cast<int>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Runs fn(0) … fn(n-1) across up to thread_budget() workers. Callers keep
/// determinism by writing into per-index slots and reducing afterwards in
/// index order. The first exception thrown by any worker is rethrown here.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t budget = static_cast<std::size_t>(thread_budget());
    const std::size_t workers = std::min(budget, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace endx
