#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>

namespace agentforge {

/// Runs fn(i) for i in [0, n) on up to `jobs` OpenMP threads. The first
/// exception thrown by any iteration is rethrown after the loop finishes.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    std::exception_ptr first;
    std::mutex mu;
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs))
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(mu);
            if (!first) first = std::current_exception();
        }
    }
    if (first) std::rethrow_exception(first);
}

}  // namespace agentforge
