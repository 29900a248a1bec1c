#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace cotpred {

/// Runs fn(i) for i in [0, n) on at most `limit` threads. Intended for
/// backend-bound loops where OpenMP's compute-oriented scheduling is a poor fit.
/// fn must not throw.
template <class Fn>
void bounded_for(std::size_t n, std::size_t limit, Fn &&fn) {
    limit = std::clamp<std::size_t>(limit, 1, std::max<std::size_t>(n, 1));
    if (limit == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    workers.reserve(limit);
    for (std::size_t w = 0; w < limit; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
}

} // namespace cotpred
