#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <mutex>

#include "mot/backend/types.hpp"

namespace mot {

/// Counting gate shared by backends so nested parallel stages never exceed
/// one global in-flight bound.
class InFlightLimit {
public:
    explicit InFlightLimit(std::size_t max_in_flight) : max_(max_in_flight) {
        if (max_ == 0) throw ConfigError("max_in_flight must be >= 1");
    }

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return active_ < max_; });
        ++active_;
        if (active_ > peak_) peak_ = active_;
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            --active_;
        }
        cv_.notify_one();
    }

    std::size_t peak() const {
        std::lock_guard lock(mutex_);
        return peak_;
    }

    std::size_t limit() const noexcept { return max_; }

private:
    std::size_t max_;
    std::size_t active_ = 0;
    std::size_t peak_ = 0;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
};

namespace detail {
struct GateHold {
    explicit GateHold(InFlightLimit& g) : gate(g) { gate.acquire(); }
    ~GateHold() { gate.release(); }
    GateHold(const GateHold&) = delete;
    GateHold& operator=(const GateHold&) = delete;
    InFlightLimit& gate;
};
} // namespace detail

class ThrottledChatBackend : public ChatBackend {
public:
    ThrottledChatBackend(ChatBackend& inner, InFlightLimit& gate) : inner_(inner), gate_(gate) {}

    std::size_t request_count() const noexcept { return requests_.load(); }
    std::size_t sample_count() const noexcept { return samples_.load(); }

protected:
    CompletionResult do_complete(const CompletionRequest& request) override {
        detail::GateHold hold(gate_);
        ++requests_;
        samples_ += request.num_samples;
        return inner_.complete(request);
    }

private:
    ChatBackend& inner_;
    InFlightLimit& gate_;
    std::atomic<std::size_t> requests_{0};
    std::atomic<std::size_t> samples_{0};
};

class ThrottledEmbedder : public EmbeddingBackend {
public:
    ThrottledEmbedder(EmbeddingBackend& inner, InFlightLimit& gate) : inner_(inner), gate_(gate) {}

    std::string model_id() const override { return inner_.model_id(); }

protected:
    std::vector<EmbeddingVector> do_embed(std::span<const std::string> texts) override {
        detail::GateHold hold(gate_);
        return inner_.embed(texts);
    }

private:
    EmbeddingBackend& inner_;
    InFlightLimit& gate_;
};

} // namespace mot
