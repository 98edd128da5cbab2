#pragma once

// Deterministic parallel index loop: every index derives its own state (seeds,
// output slot), so results are identical for any worker count, including 1.

#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lab {

inline int default_jobs() {
    if (const char* env = std::getenv("LAB_JOBS")) {
        const int j = std::atoi(env);
        if (j >= 1) return j;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

template <class F>
void parallel_for(std::size_t n, int jobs, F&& body) {
    if (jobs < 1) throw std::invalid_argument("parallel_for: jobs < 1");
    if (jobs == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(jobs, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::vector<std::exception_ptr> errs(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                // strided assignment: indices w, w+workers, ...
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace lab
