// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace flownqs {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(i) for i in [0, n_tasks) on up to n_threads workers. Tasks write
/// only to their own slots, so results never depend on scheduling; callers
/// reduce in index order afterwards. The first exception is rethrown.
template <class Fn>
inline void parallel_for(std::size_t n_tasks, int n_threads, Fn&& fn) {
    n_threads = resolve_threads(n_threads);
    if (n_threads <= 1 || n_tasks <= 1) {
        for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::exception_ptr err;
    std::vector<std::thread> workers;
    std::size_t stride = static_cast<std::size_t>(n_threads);
    for (std::size_t t = 0; t < stride && t < n_tasks; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n_tasks; i += stride) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (std::thread& w : workers) w.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace flownqs
