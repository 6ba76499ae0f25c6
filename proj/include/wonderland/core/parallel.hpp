#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace wonderland {

/// Worker count: hardware concurrency capped by WONDERLAND_THREADS.
inline std::size_t thread_count() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char *env = std::getenv("WONDERLAND_THREADS")) {
        try {
            const long cap = std::stol(env);
            if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
        } catch (...) {
        }
    }
    return n;
}

/// Runs fn(chunk_begin, chunk_end, chunk_index) over [0, n) split into fixed-size chunks.
///
/// Chunk boundaries depend only on n and chunk, never on the worker count, so callers
/// that reduce per-chunk partials in chunk order get bit-identical results regardless
/// of how many threads run.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, Fn &&fn) {
    if (n == 0) return;
    chunk = std::max<std::size_t>(chunk, 1);
    const std::size_t num_chunks = (n + chunk - 1) / chunk;
    const std::size_t workers = std::min(thread_count(), num_chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < num_chunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk), c);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t c = w; c < num_chunks; c += workers) {
                try {
                    fn(c * chunk, std::min(n, (c + 1) * chunk), c);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto &t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace wonderland
