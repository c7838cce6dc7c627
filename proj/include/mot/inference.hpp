#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mot/backend/types.hpp"
#include "mot/memory.hpp"
#include "mot/parsing.hpp"
#include "mot/prethink.hpp"
#include "mot/prompt.hpp"
#include "mot/recall.hpp"
#include "mot/task.hpp"
#include "mot/util/parallel.hpp"

namespace mot {

enum class ModeKind {
    few_shot_cot,
    zero_shot_cot,
    zero_shot_direct,
    few_shot_direct,
    mot,
    mot_no_rationale,
    mot_no_thinking,
};

inline std::string_view to_string(ModeKind k) {
    switch (k) {
        case ModeKind::few_shot_cot: return "few_shot_cot";
        case ModeKind::zero_shot_cot: return "zero_shot_cot";
        case ModeKind::zero_shot_direct: return "zero_shot_direct";
        case ModeKind::few_shot_direct: return "few_shot_direct";
        case ModeKind::mot: return "mot";
        case ModeKind::mot_no_rationale: return "mot_no_rationale";
        case ModeKind::mot_no_thinking: return "mot_no_thinking";
    }
    return "mot";
}

inline ModeKind mode_kind_from_string(std::string_view s) {
    for (auto k : {ModeKind::few_shot_cot, ModeKind::zero_shot_cot, ModeKind::zero_shot_direct,
                   ModeKind::few_shot_direct, ModeKind::mot, ModeKind::mot_no_rationale, ModeKind::mot_no_thinking})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown inference mode '" + std::string(s) + "'");
}

inline bool uses_memory(ModeKind k) {
    return k == ModeKind::mot || k == ModeKind::mot_no_rationale || k == ModeKind::mot_no_thinking;
}
inline bool uses_static_demos(ModeKind k) { return k == ModeKind::few_shot_cot || k == ModeKind::few_shot_direct; }
inline bool is_zero_shot(ModeKind k) { return k == ModeKind::zero_shot_cot || k == ModeKind::zero_shot_direct; }

struct SelfConsistency {
    std::size_t num_paths = 1;
    double temperature = 0.0;
};

struct InferenceMode {
    ModeKind kind = ModeKind::mot;
    std::optional<SelfConsistency> self_consistency;
};

enum class RecallKind { llm, semantic, random };

inline RecallKind recall_kind_from_string(std::string_view s) {
    if (s == "llm") return RecallKind::llm;
    if (s == "semantic") return RecallKind::semantic;
    if (s == "random") return RecallKind::random;
    throw ConfigError("unknown recall method '" + std::string(s) + "'");
}

inline std::string_view to_string(RecallKind k) {
    return k == RecallKind::llm ? "llm" : k == RecallKind::semantic ? "semantic" : "random";
}

inline constexpr std::string_view forced_answer_prefix = "The answer is";

struct InferenceConfig {
    std::string model_id;
    std::size_t max_tokens = default_max_tokens;
    std::vector<std::string> triggers = default_triggers();
    PromptStyle style;
    std::size_t k = 10;
    RecallKind recall = RecallKind::llm;
    std::size_t demo_count = 0;  // 0 = one per cluster
    std::uint64_t seed = 0;
    std::size_t max_in_flight = 8;
};

/// Everything a prediction may need. Pool and demos are read-only.
struct InferenceContext {
    ChatBackend& chat;
    EmbeddingBackend* embedder = nullptr;
    const MemoryPool* pool = nullptr;
    const DemoSet* demos = nullptr;
    InferenceConfig config;
};

struct Prediction {
    std::string question_id;
    ModeKind mode = ModeKind::mot;
    std::vector<std::string> raw_paths;
    ParsedAnswer parsed;
    std::optional<VoteSummary> vote;
    std::optional<std::vector<RetrievalChoice>> recalled;
    bool failed = false;
    std::string error;
    double elapsed_ms = 0.0;
};

inline void check_mode_inputs(ModeKind kind, const InferenceContext& ctx) {
    if (uses_memory(kind)) {
        if (!ctx.pool) throw ConfigError(std::string(to_string(kind)) + " needs a memory pool");
        if (ctx.config.recall != RecallKind::random && !ctx.embedder)
            throw ConfigError(std::string(to_string(kind)) + " needs an embedding backend");
    }
    if (uses_static_demos(kind) && (!ctx.demos || ctx.demos->demos.empty()))
        throw ConfigError(std::string(to_string(kind)) + " needs static demonstrations");
}

/// Builds the answering request. Greedy single-sample by default; callers
/// adjust temperature/num_samples for self-consistency.
inline CompletionRequest assemble_prompt(const std::vector<Demonstration>& demos, const TaskItem& question,
                                         ModeKind mode, const InferenceConfig& config) {
    if (is_zero_shot(mode) && !demos.empty())
        throw ConfigError(std::string(to_string(mode)) + " takes no demonstrations");
    if (!is_zero_shot(mode) && demos.empty())
        throw ConfigError(std::string(to_string(mode)) + " needs demonstrations");

    const bool strip = mode == ModeKind::few_shot_direct || mode == ModeKind::mot_no_rationale;
    std::string text = render_few_shot(strip ? strip_rationales(demos) : demos, question.question_text, config.style);
    if (mode == ModeKind::zero_shot_cot) {
        text += " ";
        text += step_by_step;
    }

    CompletionRequest r;
    r.messages.push_back({Role::user, std::move(text)});
    if (mode == ModeKind::zero_shot_direct || mode == ModeKind::mot_no_thinking)
        r.messages.push_back({Role::assistant_prefix, std::string(forced_answer_prefix)});
    r.temperature = 0.0;
    r.num_samples = 1;
    r.max_tokens = config.max_tokens;
    r.stop_sequences = {"\nQ:"};
    r.model_id = config.model_id;
    return r;
}

/// Turns a recalled memory into a demonstration: the sampled path up to its
/// answer trigger is the rationale, the voted answer is the answer.
inline Demonstration demonstration_from_memory(const MemoryEntry& e, const TaskFormat& format,
                                               std::span<const std::string> triggers = default_triggers()) {
    Demonstration d;
    d.question_text = e.question_text;
    d.answer_text = display_answer(e.answer, format);
    const auto parsed = parse_answer(e.rationale_text, format, triggers);
    const std::string& trig = parsed.trigger_used;
    const auto pos = trig.empty() ? std::string::npos : e.rationale_text.rfind(trig);
    if (pos != std::string::npos) {
        d.rationale_text = std::string(strings::trim(std::string_view(e.rationale_text).substr(0, pos)));
        d.answer_trigger = trig;
    } else {
        d.rationale_text = std::string(strings::trim(e.rationale_text));
    }
    return d;
}

inline std::vector<RetrievalChoice> recall_for(const TaskItem& item, const InferenceContext& ctx) {
    const auto& cfg = ctx.config;
    switch (cfg.recall) {
        case RecallKind::llm:
            return recall_memories(*ctx.pool, item.question_text, ctx.chat, *ctx.embedder,
                                   RecallConfig{cfg.k, cfg.model_id, cfg.max_tokens, cfg.max_in_flight});
        case RecallKind::semantic: return recall_semantic_only(*ctx.pool, item.question_text, *ctx.embedder);
        case RecallKind::random: return recall_random(*ctx.pool, mix_seed(cfg.seed, fnv1a64(item.question_id)));
    }
    return {};
}

namespace detail {

inline std::string join_prefix(std::string_view prefix, std::string_view completion) {
    std::string out(prefix);
    if (!completion.empty() && !strings::is_space(completion.front())) out.push_back(' ');
    out += completion;
    return out;
}

} // namespace detail

/// Answers one question in the given mode.
inline Prediction answer_one(const TaskItem& item, const InferenceMode& mode, InferenceContext& ctx) {
    const auto started = std::chrono::steady_clock::now();
    check_mode_inputs(mode.kind, ctx);
    const auto& cfg = ctx.config;

    Prediction pred;
    pred.question_id = item.question_id;
    pred.mode = mode.kind;

    std::vector<Demonstration> demos;
    if (uses_memory(mode.kind)) {
        auto choices = recall_for(item, ctx);
        const std::size_t want = cfg.demo_count == 0 ? choices.size() : std::min(cfg.demo_count, choices.size());
        for (std::size_t i = 0; i < want; ++i)
            demos.push_back(demonstration_from_memory(choices[i].chosen_entry, item.format, cfg.triggers));
        pred.recalled = std::move(choices);
    } else if (uses_static_demos(mode.kind)) {
        demos = ctx.demos->demos;
    }

    auto request = assemble_prompt(demos, item, mode.kind, cfg);
    if (mode.self_consistency) {
        request.temperature = mode.self_consistency->temperature;
        request.num_samples = mode.self_consistency->num_paths;
    }
    const auto prefix = request.assistant_prefix();
    auto result = ctx.chat.complete(request);

    std::vector<ThoughtSample> paths;
    for (std::size_t i = 0; i < result.samples.size(); ++i) {
        std::string full = prefix ? detail::join_prefix(*prefix, result.samples[i]) : result.samples[i];
        auto parsed = parse_answer(full, item.format, cfg.triggers);
        if (mode.kind == ModeKind::zero_shot_cot && !parsed.ok()) {
            const std::string trig = zero_shot_answer_trigger();
            CompletionRequest extract = request;
            extract.messages = {{Role::user, request.prompt_text() + " " +
                                                 (full.empty() ? trig : full + " " + trig)}};
            extract.temperature = 0.0;
            extract.num_samples = 1;
            extract.first_sample_index = 0;
            const auto answer = ctx.chat.complete(extract).samples.front();
            full = (full.empty() ? trig : full + " " + trig);
            full = detail::join_prefix(full, answer);
            const std::vector<std::string> only{trig};
            parsed = parse_answer(full, item.format, only);
        }
        pred.raw_paths.push_back(full);
        paths.push_back({i, std::move(full), std::move(parsed)});
    }

    if (mode.self_consistency) {
        auto vote = majority_vote(paths);
        pred.parsed = vote.empty() ? ParsedAnswer::unparseable()
                                   : ParsedAnswer{ParseStatus::parsed, vote.winner, paths.front().answer.trigger_used};
        if (!vote.empty())
            for (const auto& p : paths)
                if (p.answer.ok() && p.answer.value == vote.winner) {
                    pred.parsed.trigger_used = p.answer.trigger_used;
                    break;
                }
        pred.vote = std::move(vote);
    } else {
        pred.parsed = paths.front().answer;
    }
    pred.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return pred;
}

/// answer_one over all items with bounded concurrency. Item failures are
/// recorded on the prediction; more than half failing aborts the batch.
inline std::vector<Prediction> predict_batch(std::span<const TaskItem> items, const InferenceMode& mode,
                                             InferenceContext& ctx) {
    check_mode_inputs(mode.kind, ctx);
    auto preds = parallel_map(items.size(), ctx.config.max_in_flight, [&](std::size_t i) {
        try {
            return answer_one(items[i], mode, ctx);
        } catch (const PreconditionError&) {
            throw;
        } catch (const Error& e) {
            spdlog::warn("predict: '{}' failed: {}", items[i].question_id, e.what());
            Prediction p;
            p.question_id = items[i].question_id;
            p.mode = mode.kind;
            p.failed = true;
            p.error = e.what();
            return p;
        }
    });
    std::size_t failed = 0;
    for (const auto& p : preds) failed += p.failed ? 1 : 0;
    if (failed * 2 > items.size())
        throw BackendError("prediction aborted: " + std::to_string(failed) + " of " + std::to_string(items.size()) +
                           " items failed");
    return preds;
}

inline nlohmann::json to_json(const Prediction& p, bool with_timing = true) {
    nlohmann::json j = {{"question_id", p.question_id},
                        {"mode", to_string(p.mode)},
                        {"status", p.failed ? "failed" : p.parsed.ok() ? "parsed" : "unparseable"},
                        {"answer", p.parsed.value},
                        {"raw_paths", p.raw_paths},
                        {"vote", p.vote ? to_json(*p.vote) : nlohmann::json(nullptr)},
                        {"error", p.error}};
    nlohmann::json recall = nlohmann::json::array();
    if (p.recalled)
        for (const auto& c : *p.recalled)
            recall.push_back({{"cluster_id", c.cluster_id},
                              {"question_id", c.chosen_entry.question_id},
                              {"method", to_string(c.method)}});
    j["recall"] = std::move(recall);
    if (with_timing) j["elapsed_ms"] = p.elapsed_ms;
    return j;
}

} // namespace mot
