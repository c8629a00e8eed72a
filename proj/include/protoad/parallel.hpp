#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace protoad {

/// Number of workers to use when the caller passes 0.
inline std::size_t default_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Runs fn(task, worker) for every task in [0, n_tasks) on up to `workers`
/// threads. Tasks are claimed dynamically, so fn must produce results that do
/// not depend on which worker ran which task. The first exception thrown by
/// any task is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n_tasks, std::size_t workers, Fn&& fn) {
    if (workers == 0) workers = default_workers();
    workers = std::min(workers, n_tasks);
    if (workers <= 1) {
        for (std::size_t t = 0; t < n_tasks; ++t) fn(t, std::size_t{0});
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&](std::size_t worker) {
        try {
            for (std::size_t t = next++; t < n_tasks; t = next++) fn(t, worker);
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n_tasks;
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace protoad
