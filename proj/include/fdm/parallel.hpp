#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace fdm {

/// Split [0, n) into `workers` contiguous chunks and run
/// fn(worker, begin, end) on each. Chunk boundaries depend only on n and
/// workers, so per-chunk results can be merged in a fixed order.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        fn(std::size_t{0}, std::size_t{0}, n);
        return;
    }
    if (workers > n) workers = n;
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        threads.emplace_back([&, w, begin, end] {
            try {
                fn(w, begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::size_t chunk_count(std::size_t n, std::size_t workers) {
    if (workers <= 1 || n <= 1) return 1;
    return workers > n ? n : workers;
}

} // namespace fdm
