#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mot/backend/types.hpp"
#include "mot/util/random.hpp"

namespace mot {

/// One file per CacheKey under `root/<2 hex>/<digest>.json`, holding the raw
/// sample text plus the request metadata it answers. Reads are concurrent;
/// writers are serialized per key stripe and publish via rename.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path root) : root_(std::move(root)) {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec) throw IoError("cannot create cache directory " + root_.string() + ": " + ec.message());
    }

    const std::filesystem::path& root() const noexcept { return root_; }

    std::optional<std::string> get(const CacheKey& key) const {
        std::shared_lock lock(stripe(key));
        std::ifstream in(path_of(key), std::ios::binary);
        if (!in) return std::nullopt;
        std::stringstream ss;
        ss << in.rdbuf();
        try {
            return nlohmann::json::parse(ss.str()).at("text").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;  // unreadable entry counts as a miss and gets rewritten
        }
    }

    void put(const CacheKey& key, const std::string& text, nlohmann::json metadata) {
        std::unique_lock lock(stripe(key));
        const auto dest = path_of(key);
        std::filesystem::create_directories(dest.parent_path());
        nlohmann::json doc = {{"key", key.digest}, {"text", text}, {"request", std::move(metadata)}};
        const auto tmp = dest.string() + ".tmp" + std::to_string(tmp_counter_++);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write cache entry " + tmp);
            out << doc.dump(2) << '\n';
            if (!out) throw IoError("short write on cache entry " + tmp);
        }
        std::error_code ec;
        std::filesystem::rename(tmp, dest, ec);
        if (ec) throw IoError("cannot publish cache entry " + dest.string() + ": " + ec.message());
    }

    std::filesystem::path path_of(const CacheKey& key) const {
        return root_ / key.digest.substr(0, 2) / (key.digest + ".json");
    }

private:
    std::shared_mutex& stripe(const CacheKey& key) const {
        return stripes_[fnv1a64(key.digest) % stripes_.size()];
    }

    std::filesystem::path root_;
    mutable std::array<std::shared_mutex, 64> stripes_;
    std::atomic<std::uint64_t> tmp_counter_{0};
};

inline nlohmann::json request_metadata(const CompletionRequest& r, std::size_t sample_index) {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : r.messages) msgs.push_back({{"role", to_string(m.role)}, {"text", m.text}});
    return {{"model_id", r.model_id},
            {"messages", std::move(msgs)},
            {"temperature", r.temperature},
            {"max_tokens", r.max_tokens},
            {"stop", r.stop_sequences},
            {"sample_index", sample_index}};
}

/// Per-sample caching decorator. A request for n samples reuses every cached
/// index and asks the inner backend only for the missing ones, so growing n
/// never re-buys earlier samples.
class CachedChatBackend : public ChatBackend {
public:
    CachedChatBackend(ChatBackend& inner, ResponseCache& cache) : inner_(inner), cache_(cache) {}

    std::size_t hits() const noexcept { return hits_.load(); }
    std::size_t misses() const noexcept { return misses_.load(); }

protected:
    CompletionResult do_complete(const CompletionRequest& request) override {
        const std::size_t n = request.num_samples;
        const std::size_t base = request.first_sample_index;
        std::vector<std::optional<std::string>> got(n);
        std::vector<CacheKey> keys;
        keys.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            keys.push_back(CacheKey::of(request, base + i));
            got[i] = cache_.get(keys.back());
        }

        CompletionResult out;
        std::size_t i = 0;
        std::size_t missed = 0;
        while (i < n) {
            if (got[i]) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < n && !got[j]) ++j;
            CompletionRequest part = request;
            part.first_sample_index = base + i;
            part.num_samples = j - i;
            // Greedy requests must stay single-sample; a miss run there is length 1.
            auto fetched = inner_.complete(part);
            for (std::size_t s = 0; s < fetched.samples.size(); ++s) {
                cache_.put(keys[i + s], fetched.samples[s], request_metadata(request, base + i + s));
                got[i + s] = std::move(fetched.samples[s]);
            }
            if (fetched.usage) {
                if (!out.usage) out.usage = TokenUsage{};
                out.usage->prompt_tokens += fetched.usage->prompt_tokens;
                out.usage->completion_tokens += fetched.usage->completion_tokens;
            }
            missed += j - i;
            i = j;
        }
        misses_ += missed;
        hits_ += n - missed;
        for (auto& g : got) out.samples.push_back(std::move(*g));
        out.cache_hit = missed == 0;
        return out;
    }

private:
    ChatBackend& inner_;
    ResponseCache& cache_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

/// Embedding cache keyed on (model_id, text); vectors stored as JSON arrays.
class CachedEmbedder : public EmbeddingBackend {
public:
    CachedEmbedder(EmbeddingBackend& inner, ResponseCache& cache) : inner_(inner), cache_(cache) {}

    std::string model_id() const override { return inner_.model_id(); }

protected:
    std::vector<EmbeddingVector> do_embed(std::span<const std::string> texts) override {
        std::vector<std::optional<EmbeddingVector>> got(texts.size());
        std::vector<CacheKey> keys;
        std::vector<std::string> missing;
        std::vector<std::size_t> missing_at;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            keys.push_back(CacheKey{sha256_hex(nlohmann::json{{"embed_model", model_id()}, {"text", texts[i]}}.dump())});
            if (auto hit = cache_.get(keys.back())) {
                try {
                    got[i] = EmbeddingVector::from_unit(nlohmann::json::parse(*hit).get<std::vector<double>>());
                    continue;
                } catch (const nlohmann::json::exception&) {
                }
            }
            missing.push_back(texts[i]);
            missing_at.push_back(i);
        }
        if (!missing.empty()) {
            auto fresh = inner_.embed(missing);
            for (std::size_t m = 0; m < fresh.size(); ++m) {
                const auto at = missing_at[m];
                cache_.put(keys[at], nlohmann::json(fresh[m].values()).dump(),
                           {{"embed_model", model_id()}, {"text", texts[at]}});
                got[at] = std::move(fresh[m]);
            }
        }
        std::vector<EmbeddingVector> out;
        out.reserve(got.size());
        for (auto& g : got) out.push_back(std::move(*g));
        return out;
    }

private:
    EmbeddingBackend& inner_;
    ResponseCache& cache_;
};

} // namespace mot
