#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mot/backend/types.hpp"
#include "mot/util/random.hpp"

namespace mot {

/// Deterministic chat backend for tests and offline runs. Output is a pure
/// function of (request, sample index); nothing leaves the process.
class ScriptedChatBackend : public ChatBackend {
public:
    using Responder =
        std::function<std::optional<std::string>(const CompletionRequest&, std::size_t sample_index)>;

    explicit ScriptedChatBackend(Responder responder) : responder_(std::move(responder)) {}

    std::size_t request_count() const noexcept { return requests_.load(); }
    std::size_t sample_count() const noexcept { return samples_.load(); }

    void reset_counts() noexcept {
        requests_ = 0;
        samples_ = 0;
    }

    /// Every request seen so far, in arrival order.
    std::vector<CompletionRequest> requests() const {
        std::lock_guard lock(log_mutex_);
        return log_;
    }

    void set_logging(bool on) noexcept { logging_ = on; }

protected:
    CompletionResult do_complete(const CompletionRequest& request) override {
        ++requests_;
        samples_ += request.num_samples;
        if (logging_) {
            std::lock_guard lock(log_mutex_);
            log_.push_back(request);
        }
        CompletionResult out;
        out.samples.reserve(request.num_samples);
        for (std::size_t i = 0; i < request.num_samples; ++i) {
            auto text = responder_(request, request.first_sample_index + i);
            if (!text)
                throw ConfigError("scripted backend has no entry for prompt ending: \"" +
                                  tail(request.prompt_text()) + "\"");
            out.samples.push_back(std::move(*text));
        }
        return out;
    }

private:
    static std::string tail(const std::string& s) {
        constexpr std::size_t n = 120;
        return s.size() <= n ? s : "..." + s.substr(s.size() - n);
    }

    Responder responder_;
    std::atomic<std::size_t> requests_{0};
    std::atomic<std::size_t> samples_{0};
    std::atomic<bool> logging_{false};
    mutable std::mutex log_mutex_;
    std::vector<CompletionRequest> log_;
};

/// Which pipeline stage produced a prompt, recognised from its fixed framing.
enum class PromptStage { answer, retrieval, extract };

inline constexpr std::string_view retrieval_target_marker = "Target Question:\n";
inline constexpr std::string_view retrieval_refs_marker = "\n\nReference Questions:\n";
inline constexpr std::string_view extract_suffix = "Therefore, the answer is";

inline PromptStage prompt_stage(const CompletionRequest& r) {
    const std::string p = r.prompt_text();
    if (p.find(retrieval_target_marker) != std::string::npos &&
        p.find(retrieval_refs_marker) != std::string::npos)
        return PromptStage::retrieval;
    if (p.size() >= extract_suffix.size() &&
        p.compare(p.size() - extract_suffix.size(), extract_suffix.size(), extract_suffix) == 0)
        return PromptStage::extract;
    return PromptStage::answer;
}

/// The question a prompt is about: the retrieval target, or the final
/// blank-line separated block of an answering prompt.
inline std::string prompt_target(const CompletionRequest& r) {
    const std::string p = r.prompt_text();
    if (prompt_stage(r) == PromptStage::retrieval) {
        const auto b = p.find(retrieval_target_marker) + retrieval_target_marker.size();
        const auto e = p.find(retrieval_refs_marker, b);
        return p.substr(b, e - b);
    }
    const auto pos = p.rfind("\n\n");
    return pos == std::string::npos ? p : p.substr(pos + 2);
}

/// Rule table for the scripted backend, loadable from JSONL:
///   {"match": "...", "stage": "answer"|"retrieval"|"extract"|"any", "responses": ["...", ...]}
/// The first rule whose `match` is a substring of the prompt target wins;
/// responses are cycled by sample index.
class ScriptTable {
public:
    struct Rule {
        std::string match;
        std::optional<PromptStage> stage;
        std::vector<std::string> responses;
    };

    void add(Rule rule) {
        if (rule.responses.empty()) throw ConfigError("script rule has no responses");
        rules_.push_back(std::move(rule));
    }

    std::size_t size() const noexcept { return rules_.size(); }

    std::optional<std::string> respond(const CompletionRequest& r, std::size_t sample_index) const {
        const auto stage = prompt_stage(r);
        const auto target = prompt_target(r);
        for (const auto& rule : rules_) {
            if (rule.stage && *rule.stage != stage) continue;
            if (target.find(rule.match) == std::string::npos) continue;
            return rule.responses[sample_index % rule.responses.size()];
        }
        return std::nullopt;
    }

    ScriptedChatBackend::Responder responder() const {
        return [table = *this](const CompletionRequest& r, std::size_t i) { return table.respond(r, i); };
    }

    static ScriptTable load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open script file " + path.string());
        ScriptTable table;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (strings::trim(line).empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                Rule rule;
                rule.match = j.value("match", std::string{});
                const auto stage = j.value("stage", std::string{"any"});
                if (stage == "answer") rule.stage = PromptStage::answer;
                else if (stage == "retrieval") rule.stage = PromptStage::retrieval;
                else if (stage == "extract") rule.stage = PromptStage::extract;
                else if (stage != "any") throw ConfigError("unknown stage '" + stage + "'");
                rule.responses = j.at("responses").get<std::vector<std::string>>();
                table.add(std::move(rule));
            } catch (const nlohmann::json::exception& e) {
                throw LoadError(lineno, std::string("script: ") + e.what());
            } catch (const ConfigError& e) {
                throw LoadError(lineno, std::string("script: ") + e.what());
            }
        }
        return table;
    }

private:
    std::vector<Rule> rules_;
};

/// Hash-seeded Gaussian projection of a token bag. Equal texts map to equal
/// vectors and similarity roughly tracks token overlap.
class ScriptedEmbedder : public EmbeddingBackend {
public:
    explicit ScriptedEmbedder(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
        if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
    }

    std::string model_id() const override { return "scripted-hash-" + std::to_string(dim_); }

    std::size_t call_count() const noexcept { return calls_.load(); }

protected:
    std::vector<EmbeddingVector> do_embed(std::span<const std::string> texts) override {
        ++calls_;
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(project(t));
        return out;
    }

private:
    EmbeddingVector project(const std::string& text) const {
        auto tokens = strings::word_tokens(text);
        if (tokens.empty()) tokens.emplace_back(strings::trim(text));
        std::vector<double> acc(dim_, 0.0);
        for (const auto& tok : tokens) {
            SplitMix64 rng(mix_seed(seed_, fnv1a64(tok)));
            for (auto& a : acc) a += rng.gaussian();
        }
        return EmbeddingVector::normalized(std::move(acc));
    }

    std::size_t dim_;
    std::uint64_t seed_;
    std::atomic<std::size_t> calls_{0};
};

} // namespace mot
