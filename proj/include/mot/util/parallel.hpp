#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <type_traits>
#include <vector>

namespace mot {

/// Applies `fn(i)` for i in [0, count) on at most `max_in_flight` threads and
/// returns the results in index order. The first exception (lowest index) is
/// rethrown after all workers finish.
template <class Fn>
auto parallel_map(std::size_t count, std::size_t max_in_flight, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, std::size_t>> {
    using R = std::invoke_result_t<Fn&, std::size_t>;
    std::vector<std::optional<R>> slots(count);
    std::vector<std::exception_ptr> errors(count);

    const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, std::max<std::size_t>(count, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        {
            std::vector<std::jthread> pool;
            pool.reserve(workers);
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t i = next++; i < count; i = next++) {
                        try {
                            slots[i].emplace(fn(i));
                        } catch (...) {
                            errors[i] = std::current_exception();
                        }
                    }
                });
            }
        }
    }

    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<R> out;
    out.reserve(count);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

} // namespace mot
