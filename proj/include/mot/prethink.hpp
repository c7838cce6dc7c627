#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mot/backend/types.hpp"
#include "mot/parsing.hpp"
#include "mot/prompt.hpp"
#include "mot/task.hpp"
#include "mot/util/parallel.hpp"
#include "mot/util/random.hpp"

namespace mot {

/// One decoded reasoning path and its parsed answer.
struct ThoughtSample {
    std::size_t path_index = 0;
    std::string rationale_text;
    ParsedAnswer answer;

    bool operator==(const ThoughtSample&) const = default;
};

/// Empirical answer distribution over the parsed paths of one question.
/// `order` lists answers by first appearance in decode order.
struct VoteSummary {
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> order;
    std::size_t total_parsed = 0;
    std::string winner;
    std::size_t winner_count = 0;
    double entropy = 0.0;
    double max_p = 0.0;

    bool empty() const noexcept { return total_parsed == 0; }

    bool operator==(const VoteSummary&) const = default;
};

/// Natural-log Shannon entropy of counts/total. Throws DomainError on total=0.
inline double answer_entropy(const std::map<std::string, std::size_t>& counts, std::size_t total) {
    if (total == 0) throw DomainError("answer_entropy: empty distribution");
    std::size_t sum = 0;
    for (const auto& [_, c] : counts) sum += c;
    if (sum != total) throw PreconditionError("answer_entropy: total does not match counts");
    double h = 0.0;
    for (const auto& [_, c] : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    // Unanimity gives -1*log(1) = -0.0; report +0.
    return h == 0.0 ? 0.0 : h;
}

/// Counts parsed answers; ties go to the answer decoded first. Unparseable
/// paths are excluded from both counts and the denominator.
inline VoteSummary majority_vote(std::span<const ThoughtSample> samples) {
    if (samples.empty()) throw PreconditionError("majority_vote: no samples");
    VoteSummary v;
    for (const auto& s : samples) {
        if (!s.answer.ok()) continue;
        auto [it, inserted] = v.counts.try_emplace(s.answer.value, 0);
        if (inserted) v.order.push_back(s.answer.value);
        ++it->second;
        ++v.total_parsed;
    }
    if (v.total_parsed == 0) return v;
    for (const auto& a : v.order) {
        const auto c = v.counts.at(a);
        if (c > v.winner_count) {
            v.winner = a;
            v.winner_count = c;
        }
    }
    v.entropy = answer_entropy(v.counts, v.total_parsed);
    v.max_p = static_cast<double>(v.winner_count) / static_cast<double>(v.total_parsed);
    return v;
}

/// Seeded uniform pick among the paths that voted for the winner.
inline ThoughtSample select_retained_path(std::span<const ThoughtSample> samples, const VoteSummary& summary,
                                          std::uint64_t rng_seed) {
    if (summary.empty()) throw PreconditionError("select_retained_path: nothing parsed");
    std::vector<const ThoughtSample*> winners;
    for (const auto& s : samples)
        if (s.answer.ok() && s.answer.value == summary.winner) winners.push_back(&s);
    if (winners.empty()) throw PreconditionError("select_retained_path: summary does not match samples");
    SplitMix64 rng(rng_seed);
    return *winners[rng.uniform_index(winners.size())];
}

enum class MemorySource { self_generated, gold_filtered };

inline std::string_view to_string(MemorySource s) {
    return s == MemorySource::self_generated ? "self_generated" : "gold_filtered";
}

/// A retained question/rationale/answer triple. `rationale_text` is the full
/// sampled path, so it re-parses to `answer`.
struct MemoryEntry {
    std::string question_id;
    std::string question_text;
    std::string rationale_text;
    std::string answer;
    double entropy = 0.0;
    double max_p = 0.0;
    std::size_t n_effective = 0;
    MemorySource source = MemorySource::self_generated;
    EmbeddingVector embedding;
    std::optional<std::size_t> cluster_id;

    bool operator==(const MemoryEntry&) const = default;
};

inline nlohmann::json to_json(const MemoryEntry& e) {
    return {{"question_id", e.question_id},
            {"question_text", e.question_text},
            {"rationale_text", e.rationale_text},
            {"answer", e.answer},
            {"entropy", e.entropy},
            {"max_p", e.max_p},
            {"n_effective", e.n_effective},
            {"source", to_string(e.source)},
            {"embedding", e.embedding.values()},
            {"cluster_id", e.cluster_id ? nlohmann::json(*e.cluster_id) : nlohmann::json(nullptr)}};
}

inline MemoryEntry memory_entry_from_json(const nlohmann::json& j) {
    MemoryEntry e;
    e.question_id = j.at("question_id").get<std::string>();
    e.question_text = j.at("question_text").get<std::string>();
    e.rationale_text = j.at("rationale_text").get<std::string>();
    e.answer = j.at("answer").get<std::string>();
    e.entropy = j.at("entropy").get<double>();
    e.max_p = j.at("max_p").get<double>();
    e.n_effective = j.at("n_effective").get<std::size_t>();
    const auto src = j.at("source").get<std::string>();
    if (src == "self_generated") e.source = MemorySource::self_generated;
    else if (src == "gold_filtered") e.source = MemorySource::gold_filtered;
    else throw nlohmann::json::other_error::create(501, "unknown memory source '" + src + "'", &j);
    e.embedding = EmbeddingVector::from_unit(j.at("embedding").get<std::vector<double>>());
    if (!j.at("cluster_id").is_null()) e.cluster_id = j.at("cluster_id").get<std::size_t>();
    return e;
}

inline std::vector<MemoryEntry> filter_by_entropy(std::span<const MemoryEntry> entries, double tau) {
    if (!(tau >= 0.0)) throw PreconditionError("filter_by_entropy: tau must be >= 0");
    std::vector<MemoryEntry> out;
    for (const auto& e : entries)
        if (e.entropy <= tau) out.push_back(e);
    return out;
}

/// Max-P baseline: keep entries whose winner share is at least rho.
inline std::vector<MemoryEntry> filter_by_max_p(std::span<const MemoryEntry> entries, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw PreconditionError("filter_by_max_p: rho must be in (0, 1]");
    std::vector<MemoryEntry> out;
    for (const auto& e : entries)
        if (e.max_p >= rho) out.push_back(e);
    return out;
}

struct GoldLabel {
    std::vector<std::string> answers;
    TaskFormat format;
};

/// Gold-filtered memory: keep entries that match a gold answer exactly
/// (F1 = 1 for abstractive tasks).
inline std::vector<MemoryEntry> filter_by_gold(std::span<const MemoryEntry> entries,
                                               const std::map<std::string, GoldLabel>& golds) {
    std::vector<MemoryEntry> out;
    for (const auto& e : entries) {
        const auto it = golds.find(e.question_id);
        if (it == golds.end() || it->second.answers.empty())
            throw ConfigError("no gold answer for question '" + e.question_id + "'");
        const auto& g = it->second;
        bool keep = false;
        if (g.format.kind == FormatKind::abstractive) {
            keep = token_f1(e.answer, g.answers) == 1.0;
        } else {
            const ParsedAnswer p{ParseStatus::parsed, e.answer, {}};
            for (const auto& a : g.answers) keep = keep || exact_match(p, a, g.format) == 1;
        }
        if (keep) {
            out.push_back(e);
            out.back().source = MemorySource::gold_filtered;
        }
    }
    return out;
}

struct PrethinkConfig {
    std::size_t num_paths = 16;
    double temperature = 1.2;
    std::size_t max_tokens = default_max_tokens;
    std::string model_id;
    std::uint64_t seed = 0;
    std::size_t max_in_flight = 8;
    std::vector<std::string> triggers = default_triggers();
};

/// Raw per-question sampling record; enough to rebuild the entry offline.
struct PrethinkRecord {
    std::string question_id;
    std::string question_text;
    TaskFormat format;
    std::vector<std::string> samples;
    VoteSummary vote;
    std::optional<std::size_t> retained_path;
};

inline nlohmann::json to_json(const VoteSummary& v) {
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& a : v.order) counts.push_back({a, v.counts.at(a)});
    return {{"counts", std::move(counts)},
            {"total_parsed", v.total_parsed},
            {"winner", v.winner},
            {"winner_count", v.winner_count},
            {"entropy", v.entropy},
            {"max_p", v.max_p}};
}

inline nlohmann::json to_json(const PrethinkRecord& r) {
    return {{"question_id", r.question_id},
            {"question", r.question_text},
            {"format", to_string(r.format.kind)},
            {"labels", r.format.label_set},
            {"samples", r.samples},
            {"vote", to_json(r.vote)},
            {"retained_path", r.retained_path ? nlohmann::json(*r.retained_path) : nlohmann::json(nullptr)}};
}

inline PrethinkRecord prethink_record_from_json(const nlohmann::json& j) {
    PrethinkRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.question_text = j.at("question").get<std::string>();
    r.format = TaskFormat{format_kind_from_string(j.at("format").get<std::string>()),
                          j.at("labels").get<std::vector<std::string>>()};
    r.samples = j.at("samples").get<std::vector<std::string>>();
    const auto& v = j.at("vote");
    for (const auto& c : v.at("counts")) {
        const auto a = c.at(0).get<std::string>();
        r.vote.order.push_back(a);
        r.vote.counts[a] = c.at(1).get<std::size_t>();
    }
    r.vote.total_parsed = v.at("total_parsed").get<std::size_t>();
    r.vote.winner = v.at("winner").get<std::string>();
    r.vote.winner_count = v.at("winner_count").get<std::size_t>();
    r.vote.entropy = v.at("entropy").get<double>();
    r.vote.max_p = v.at("max_p").get<double>();
    if (!j.at("retained_path").is_null()) r.retained_path = j.at("retained_path").get<std::size_t>();
    return r;
}

inline std::uint64_t path_seed(std::uint64_t seed, const std::string& question_id) {
    return mix_seed(seed, fnv1a64(question_id));
}

inline std::vector<ThoughtSample> parse_samples(const std::vector<std::string>& raw, const TaskFormat& format,
                                                std::span<const std::string> triggers) {
    std::vector<ThoughtSample> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out.push_back({i, raw[i], parse_answer(raw[i], format, triggers)});
    return out;
}

/// Votes over a record's raw samples and builds its entry; nullopt when no
/// path parsed. Pure, so a dump replays to the same entries.
inline std::pair<VoteSummary, std::optional<MemoryEntry>> entry_from_samples(
    const std::string& question_id, const std::string& question_text, const TaskFormat& format,
    const std::vector<std::string>& raw, std::uint64_t seed, std::span<const std::string> triggers,
    std::optional<std::size_t>* retained_index = nullptr) {
    const auto samples = parse_samples(raw, format, triggers);
    auto vote = majority_vote(samples);
    if (vote.empty()) return {std::move(vote), std::nullopt};
    const auto kept = select_retained_path(samples, vote, path_seed(seed, question_id));
    if (retained_index) *retained_index = kept.path_index;
    MemoryEntry e;
    e.question_id = question_id;
    e.question_text = question_text;
    e.rationale_text = kept.rationale_text;
    e.answer = vote.winner;
    e.entropy = vote.entropy;
    e.max_p = vote.max_p;
    e.n_effective = vote.total_parsed;
    return {std::move(vote), std::move(e)};
}

inline std::vector<MemoryEntry> entries_from_records(std::span<const PrethinkRecord> records, std::uint64_t seed,
                                                     std::span<const std::string> triggers = default_triggers()) {
    std::vector<MemoryEntry> out;
    for (const auto& r : records) {
        auto [vote, entry] = entry_from_samples(r.question_id, r.question_text, r.format, r.samples, seed, triggers);
        if (entry) out.push_back(std::move(*entry));
    }
    return out;
}

/// Few-Shot-CoT request for one question (also the answering-stage prompt).
inline CompletionRequest few_shot_cot_request(const std::vector<Demonstration>& demos, const PromptStyle& style,
                                              const std::string& question, double temperature,
                                              std::size_t num_samples, std::size_t max_tokens,
                                              const std::string& model_id) {
    CompletionRequest r;
    r.messages.push_back({Role::user, render_few_shot(demos, question, style)});
    r.temperature = temperature;
    r.num_samples = num_samples;
    r.max_tokens = max_tokens;
    r.stop_sequences = {"\nQ:"};
    r.model_id = model_id;
    return r;
}

struct PrethinkOutput {
    std::vector<PrethinkRecord> records;  // one per successfully sampled item, input order
    std::vector<MemoryEntry> entries;     // unfiltered; items with nothing parsed are dropped
    std::size_t failed_items = 0;
};

/// Samples n paths per question, votes, and keeps one winning path per
/// question. Filtering is left to the caller so threshold sweeps reuse the
/// samples.
inline PrethinkOutput prethink_dataset(std::span<const TaskItem> items, const DemoSet& demos, ChatBackend& backend,
                                       const PrethinkConfig& config) {
    if (items.empty()) throw PreconditionError("prethink_dataset: no items");
    if (config.num_paths < 1) throw ConfigError("prethink: n must be >= 1");
    if (config.num_paths > 1 && !(config.temperature > 0.0))
        throw ConfigError("prethink: sampling n > 1 paths needs temperature > 0");

    struct Outcome {
        std::optional<PrethinkRecord> record;
        std::optional<MemoryEntry> entry;
        bool failed = false;
    };

    auto outcomes = parallel_map(items.size(), config.max_in_flight, [&](std::size_t i) {
        const auto& item = items[i];
        Outcome o;
        try {
            auto req = few_shot_cot_request(demos.demos, demos.style, item.question_text, config.temperature,
                                            config.num_paths,
                                            config.max_tokens, config.model_id);
            auto result = backend.complete(req);
            PrethinkRecord rec{item.question_id, item.question_text, item.format, std::move(result.samples), {}, {}};
            auto [vote, entry] = entry_from_samples(rec.question_id, rec.question_text, rec.format, rec.samples,
                                                    config.seed, config.triggers, &rec.retained_path);
            rec.vote = std::move(vote);
            if (!entry) spdlog::info("prethink: dropping '{}' (no parseable path)", item.question_id);
            o.record = std::move(rec);
            o.entry = std::move(entry);
        } catch (const PreconditionError&) {
            throw;
        } catch (const Error& e) {
            spdlog::warn("prethink: skipping '{}': {}", item.question_id, e.what());
            o.failed = true;
        }
        return o;
    });

    PrethinkOutput out;
    for (auto& o : outcomes) {
        if (o.failed) ++out.failed_items;
        if (o.record) out.records.push_back(std::move(*o.record));
        if (o.entry) out.entries.push_back(std::move(*o.entry));
    }
    if (out.failed_items * 2 > items.size())
        throw BackendError("prethink aborted: " + std::to_string(out.failed_items) + " of " +
                           std::to_string(items.size()) + " items failed");
    return out;
}

} // namespace mot
