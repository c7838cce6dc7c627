#pragma once

#include <cmath>
#include <cstddef>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mot/error.hpp"
#include "mot/util/digest.hpp"
#include "mot/util/strings.hpp"

namespace mot {

enum class Role { system, user, assistant_prefix };

inline std::string_view to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant_prefix: return "assistant-prefix";
    }
    return "user";
}

struct Message {
    Role role = Role::user;
    std::string text;

    bool operator==(const Message&) const = default;
};

inline constexpr std::size_t default_max_tokens = 512;

struct CompletionRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    std::size_t num_samples = 1;
    std::size_t max_tokens = default_max_tokens;
    std::vector<std::string> stop_sequences;
    std::string model_id;
    /// Decode index of samples[0]. Lets a cache fetch only the missing tail
    /// of a sample set while keeping scripted output keyed on the true index.
    std::size_t first_sample_index = 0;

    bool operator==(const CompletionRequest&) const = default;

    void validate() const {
        if (num_samples < 1) throw PreconditionError("num_samples must be >= 1");
        if (!(temperature >= 0.0) || !std::isfinite(temperature))
            throw PreconditionError("temperature must be a finite non-negative number");
        if (temperature == 0.0 && num_samples != 1)
            throw PreconditionError("greedy decoding (temperature 0) yields exactly one sample");
        if (max_tokens < 1) throw PreconditionError("max_tokens must be >= 1");
        if (messages.empty()) throw PreconditionError("request has no messages");
        for (std::size_t i = 0; i + 1 < messages.size(); ++i)
            if (messages[i].role == Role::assistant_prefix)
                throw PreconditionError("assistant-prefix message must be last");
    }

    /// Forced output prefix, if the last message carries one.
    std::optional<std::string> assistant_prefix() const {
        if (!messages.empty() && messages.back().role == Role::assistant_prefix)
            return messages.back().text;
        return std::nullopt;
    }

    /// Concatenated user/system text (everything but the forced prefix).
    std::string prompt_text() const {
        std::string out;
        for (const auto& m : messages) {
            if (m.role == Role::assistant_prefix) continue;
            if (!out.empty()) out += "\n";
            out += m.text;
        }
        return out;
    }
};

struct TokenUsage {
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

struct CompletionResult {
    std::vector<std::string> samples;
    std::optional<TokenUsage> usage;
    bool cache_hit = false;
};

/// Unit-length embedding. Construct through `normalized`.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    static EmbeddingVector normalized(std::vector<double> values) {
        double sq = 0.0;
        for (double v : values) sq += v * v;
        const double n = std::sqrt(sq);
        if (!(n > 0.0) || !std::isfinite(n))
            throw DomainError("cannot normalize a zero or non-finite embedding");
        for (double& v : values) v /= n;
        return EmbeddingVector(std::move(values));
    }

    /// Adopts values that are already unit length (e.g. loaded from disk).
    static EmbeddingVector from_unit(std::vector<double> values) {
        return EmbeddingVector(std::move(values));
    }

    const std::vector<double>& values() const noexcept { return values_; }
    std::size_t dim() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double norm() const noexcept {
        double sq = 0.0;
        for (double v : values_) sq += v * v;
        return std::sqrt(sq);
    }

    bool operator==(const EmbeddingVector&) const = default;

private:
    explicit EmbeddingVector(std::vector<double> v) : values_(std::move(v)) {}
    std::vector<double> values_;
};

/// Cosine of two unit vectors.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw InternalError("embedding dimensionality mismatch");
    double s = 0.0;
    const auto& x = a.values();
    const auto& y = b.values();
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

/// Content hash identifying one decoded sample of a logical request.
struct CacheKey {
    std::string digest;

    static CacheKey of(const CompletionRequest& r, std::size_t sample_index) {
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : r.messages)
            msgs.push_back({{"role", to_string(m.role)}, {"text", m.text}});
        const nlohmann::json doc = {
            {"model_id", r.model_id},
            {"messages", std::move(msgs)},
            {"temperature", r.temperature},
            {"max_tokens", r.max_tokens},
            {"stop", r.stop_sequences},
            {"sample_index", sample_index},
        };
        // nlohmann::json sorts object keys, so dump() is canonical.
        return CacheKey{sha256_hex(doc.dump())};
    }

    bool operator==(const CacheKey&) const = default;
};

/// Chat-completion model. Implementations override `do_complete`; callers go
/// through `complete`, which validates the request first.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    CompletionResult complete(const CompletionRequest& request) {
        request.validate();
        auto result = do_complete(request);
        if (result.samples.size() != request.num_samples)
            throw ProtocolError("backend returned " + std::to_string(result.samples.size()) +
                                " samples, expected " + std::to_string(request.num_samples));
        return result;
    }

protected:
    virtual CompletionResult do_complete(const CompletionRequest& request) = 0;
};

/// Text-embedding model. Output is L2-normalized and order-preserving; every
/// vector from one instance has the same dimensionality.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;

    virtual std::string model_id() const = 0;

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) {
        if (texts.empty()) throw PreconditionError("embed: no texts");
        for (const auto& t : texts)
            if (strings::trim(t).empty()) throw PreconditionError("embed: blank text");
        auto out = do_embed(texts);
        if (out.size() != texts.size()) throw ProtocolError("embed: result count mismatch");
        std::lock_guard lock(dim_mutex_);
        for (const auto& v : out) {
            if (dim_ == 0) dim_ = v.dim();
            if (v.dim() != dim_)
                throw InternalError("embedding dimensionality drifted from " +
                                    std::to_string(dim_) + " to " + std::to_string(v.dim()));
        }
        return out;
    }

    EmbeddingVector embed_one(const std::string& text) {
        return embed(std::span<const std::string>(&text, 1)).front();
    }

protected:
    virtual std::vector<EmbeddingVector> do_embed(std::span<const std::string> texts) = 0;

private:
    std::mutex dim_mutex_;
    std::size_t dim_ = 0;
};

} // namespace mot
