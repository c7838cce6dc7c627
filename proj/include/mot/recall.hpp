#pragma once

#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mot/backend/scripted.hpp"
#include "mot/backend/types.hpp"
#include "mot/memory.hpp"
#include "mot/util/parallel.hpp"
#include "mot/util/random.hpp"

namespace mot {

struct RetrievalPrompt {
    std::string target_question;
    std::vector<std::string> candidate_questions;
    std::string rendered_text;
};

inline constexpr std::string_view retrieval_closing =
    "Which one of the above reference questions is the most helpful question for you to answer the target "
    "question? You must choose exactly one reference question to you answer the target question. Your response "
    "must end in this format: \"The most helpful question is question [index].\". For example, if question 5 is "
    "your answer, you must end in \"The most helpful question is question 5.\"";

/// The LLM-retrieval prompt. Candidates carry questions only.
inline RetrievalPrompt render_retrieval_prompt(const std::string& target, const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw PreconditionError("render_retrieval_prompt: no candidates");
    std::string text = "I will provide you with a target question and " + std::to_string(candidates.size()) +
                       " reference questions. I need you to choose a reference question from \"Reference "
                       "Questions\", whose question, train of thought or answer would be most helpful for you to "
                       "answer the target question. Please note that the following reference QA pairs are "
                       "presented in a random order without any prioritization.\n\n";
    text += retrieval_target_marker;
    text += target;
    text += retrieval_refs_marker;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        text += std::to_string(i + 1) + ".\nQ: " + candidates[i] + "\n";
    text += "\n";
    text += retrieval_closing;
    return {target, candidates, std::move(text)};
}

/// 1-based index from the last "most helpful question is question N", or
/// nullopt when absent or out of [1, num_candidates].
inline std::optional<std::size_t> parse_retrieval_choice(std::string_view raw, std::size_t num_candidates) {
    if (num_candidates < 1) throw PreconditionError("parse_retrieval_choice: no candidates");
    static const std::regex pattern(R"(most helpful question is question\s+(\d+))", std::regex::icase);
    std::optional<std::string> last;
    const std::string s(raw);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), pattern); it != std::sregex_iterator(); ++it)
        last = (*it)[1].str();
    if (!last || last->size() > 9) return std::nullopt;
    const auto idx = static_cast<std::size_t>(std::stoul(*last));
    if (idx < 1 || idx > num_candidates) return std::nullopt;
    return idx;
}

enum class RetrievalMethod { llm, semantic_fallback, random };

inline std::string_view to_string(RetrievalMethod m) {
    switch (m) {
        case RetrievalMethod::llm: return "llm";
        case RetrievalMethod::semantic_fallback: return "semantic_fallback";
        case RetrievalMethod::random: return "random";
    }
    return "llm";
}

struct RetrievalChoice {
    std::size_t cluster_id = 0;
    std::optional<std::size_t> chosen_index;  // 1-based, set when method = llm
    MemoryEntry chosen_entry;
    RetrievalMethod method = RetrievalMethod::semantic_fallback;
    // Transcript (empty for semantic-only and random recall).
    std::string prompt;
    std::string raw_output;
    std::string error;
};

inline nlohmann::json to_json(const RetrievalChoice& c) {
    return {{"cluster_id", c.cluster_id},
            {"chosen_index", c.chosen_index ? nlohmann::json(*c.chosen_index) : nlohmann::json(nullptr)},
            {"question_id", c.chosen_entry.question_id},
            {"method", to_string(c.method)},
            {"prompt", c.prompt},
            {"raw_output", c.raw_output},
            {"error", c.error}};
}

struct RecallConfig {
    std::size_t k = 10;
    std::string model_id;
    std::size_t max_tokens = default_max_tokens;
    std::size_t max_in_flight = 8;
};

/// One memory per cluster chosen by the model from the cluster's top-k
/// candidates (greedy decode). Parse or backend failures fall back to the
/// top semantic candidate. Results are in cluster order.
inline std::vector<RetrievalChoice> recall_memories(const MemoryPool& pool, const std::string& test_question,
                                                    ChatBackend& backend, EmbeddingBackend& embedder,
                                                    const RecallConfig& config) {
    if (pool.entries.empty() || pool.l == 0) throw ConfigError("recall: memory pool is empty");
    const auto query = embedder.embed_one(test_question);
    const auto sets = candidates_for(pool, query, config.k);

    return parallel_map(sets.size(), config.max_in_flight, [&](std::size_t c) {
        const auto& set = sets[c];
        if (set.candidates.empty()) throw InternalError("recall: cluster " + std::to_string(c) + " is empty");
        RetrievalChoice choice;
        choice.cluster_id = set.cluster_id;
        std::vector<std::string> questions;
        for (const auto& s : set.candidates) questions.push_back(pool.entries[s.entry_index].question_text);
        auto prompt = render_retrieval_prompt(test_question, questions);
        choice.prompt = prompt.rendered_text;

        CompletionRequest req;
        req.messages.push_back({Role::user, std::move(prompt.rendered_text)});
        req.temperature = 0.0;
        req.num_samples = 1;
        req.max_tokens = config.max_tokens;
        req.model_id = config.model_id;
        try {
            choice.raw_output = backend.complete(req).samples.front();
            if (auto idx = parse_retrieval_choice(choice.raw_output, questions.size())) {
                choice.chosen_index = *idx;
                choice.method = RetrievalMethod::llm;
                choice.chosen_entry = pool.entries[set.candidates[*idx - 1].entry_index];
                return choice;
            }
            choice.error = "unparseable retrieval choice";
        } catch (const PreconditionError&) {
            throw;
        } catch (const Error& e) {
            choice.error = e.what();
        }
        choice.method = RetrievalMethod::semantic_fallback;
        choice.chosen_entry = pool.entries[set.candidates.front().entry_index];
        return choice;
    });
}

/// Top-1 semantic candidate per cluster; no completion calls.
inline std::vector<RetrievalChoice> recall_semantic_only(const MemoryPool& pool, const std::string& test_question,
                                                         EmbeddingBackend& embedder) {
    if (pool.entries.empty() || pool.l == 0) throw ConfigError("recall: memory pool is empty");
    const auto sets = candidates_for(pool, embedder.embed_one(test_question), 1);
    std::vector<RetrievalChoice> out;
    for (const auto& set : sets) {
        if (set.candidates.empty()) throw InternalError("recall: cluster " + std::to_string(set.cluster_id) + " is empty");
        RetrievalChoice c;
        c.cluster_id = set.cluster_id;
        c.method = RetrievalMethod::semantic_fallback;
        c.chosen_entry = pool.entries[set.candidates.front().entry_index];
        out.push_back(std::move(c));
    }
    return out;
}

/// One seeded uniform member per cluster.
inline std::vector<RetrievalChoice> recall_random(const MemoryPool& pool, std::uint64_t seed) {
    if (pool.entries.empty() || pool.l == 0) throw ConfigError("recall: memory pool is empty");
    std::vector<RetrievalChoice> out;
    for (std::size_t c = 0; c < pool.l; ++c) {
        const auto members = pool.members(c);
        if (members.empty()) throw InternalError("recall: cluster " + std::to_string(c) + " is empty");
        SplitMix64 rng(mix_seed(seed, c));
        RetrievalChoice choice;
        choice.cluster_id = c;
        choice.method = RetrievalMethod::random;
        choice.chosen_entry = pool.entries[members[rng.uniform_index(members.size())]];
        out.push_back(std::move(choice));
    }
    return out;
}

} // namespace mot
