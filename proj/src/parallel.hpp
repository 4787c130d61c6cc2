#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace cfhmm::detail {

// Runs fn(chunk) for chunk = 0..n_chunks-1 on up to `threads` threads. Each chunk is
// handled by exactly one thread; callers reduce per-chunk results in chunk order. The first
// exception (lowest chunk index) is rethrown.
template <class Fn>
void parallel_chunks(int n_chunks, int threads, Fn&& fn) {
    threads = std::clamp(threads, 1, std::max(1, n_chunks));
    if (threads == 1) {
        for (int c = 0; c < n_chunks; ++c) fn(c);
        return;
    }
    std::vector<std::exception_ptr> errors(n_chunks);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (int c = w; c < n_chunks; c += threads) {
                try {
                    fn(c);
                } catch (...) {
                    errors[c] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace cfhmm::detail
