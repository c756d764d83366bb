#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace adaptkit {

// Runs fn(i) for every i in [0, count) across up to `workers` threads.
// The index space is split into contiguous blocks, so callers that write
// results into slot i of preallocated storage get output independent of
// both the worker count and the scheduler.
template <typename Fn>
void parallel_for(size_t count, unsigned workers, Fn&& fn) {
    if (count == 0) return;
    size_t n_threads = workers == 0 ? 1 : workers;
    if (n_threads > count) n_threads = count;
    if (n_threads == 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }

    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    const size_t base = count / n_threads;
    const size_t extra = count % n_threads;
    size_t begin = 0;
    for (size_t t = 0; t < n_threads; ++t) {
        const size_t len = base + (t < extra ? 1 : 0);
        const size_t end = begin + len;
        pool.emplace_back([&fn, &errors, t, begin, end] {
            try {
                for (size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
        begin = end;
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

}  // namespace adaptkit
