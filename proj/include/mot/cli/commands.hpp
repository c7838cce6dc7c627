#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mot/backend/cache.hpp"
#include "mot/backend/http.hpp"
#include "mot/backend/scripted.hpp"
#include "mot/backend/throttle.hpp"
#include "mot/config.hpp"
#include "mot/demos.hpp"
#include "mot/harness.hpp"
#include "mot/inference.hpp"
#include "mot/memory.hpp"
#include "mot/prethink.hpp"

namespace mot::cli {

/// Backends for one process: raw backend, then the in-flight gate, then the
/// response cache (outermost, so cache hits never take a slot).
class Runtime {
public:
    explicit Runtime(const RunConfig& config) : gate_(config.backend.max_in_flight) {
        if (config.backend.kind == "scripted") {
            if (config.backend.script.empty())
                throw ConfigError("scripted backend needs backend.script (a JSONL rule file)");
            raw_chat_ = std::make_unique<ScriptedChatBackend>(ScriptTable::load(config.backend.script).responder());
            raw_embed_ = std::make_unique<ScriptedEmbedder>(config.backend.embed_dim);
        } else {
            raw_chat_ = std::make_unique<HttpChatBackend>(config.backend.base_url);
            raw_embed_ = std::make_unique<HttpEmbedder>(config.backend.base_url, config.backend.embedder_id);
        }
        throttled_chat_ = std::make_unique<ThrottledChatBackend>(*raw_chat_, gate_);
        throttled_embed_ = std::make_unique<ThrottledEmbedder>(*raw_embed_, gate_);
        chat_ = throttled_chat_.get();
        embed_ = throttled_embed_.get();
        if (!config.backend.cache_dir.empty()) {
            cache_ = std::make_unique<ResponseCache>(config.backend.cache_dir);
            cached_chat_ = std::make_unique<CachedChatBackend>(*chat_, *cache_);
            cached_embed_ = std::make_unique<CachedEmbedder>(*embed_, *cache_);
            chat_ = cached_chat_.get();
            embed_ = cached_embed_.get();
        }
    }

    ChatBackend& chat() { return *chat_; }
    EmbeddingBackend& embedder() { return *embed_; }

    /// Calls that reached the underlying backend (cache misses only).
    nlohmann::json call_counts() const {
        nlohmann::json j = {{"requests", throttled_chat_->request_count()},
                            {"samples", throttled_chat_->sample_count()},
                            {"peak_in_flight", gate_.peak()}};
        if (cached_chat_) {
            j["cache_hits"] = cached_chat_->hits();
            j["cache_misses"] = cached_chat_->misses();
        }
        return j;
    }

private:
    InFlightLimit gate_;
    std::unique_ptr<ChatBackend> raw_chat_;
    std::unique_ptr<EmbeddingBackend> raw_embed_;
    std::unique_ptr<ThrottledChatBackend> throttled_chat_;
    std::unique_ptr<ThrottledEmbedder> throttled_embed_;
    std::unique_ptr<ResponseCache> cache_;
    std::unique_ptr<CachedChatBackend> cached_chat_;
    std::unique_ptr<CachedEmbedder> cached_embed_;
    ChatBackend* chat_ = nullptr;
    EmbeddingBackend* embed_ = nullptr;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
    return os.str();
}

inline std::string make_run_id(const nlohmann::json& snapshot) {
    return utc_timestamp() + "-" + config_hash(snapshot).substr(0, 8);
}

inline InferenceConfig inference_config(const RunConfig& c, const DemoSet& demos) {
    InferenceConfig ic;
    ic.model_id = c.backend.model_id;
    ic.max_tokens = c.backend.max_tokens;
    ic.style = demos.style;
    ic.k = c.memory.k;
    ic.recall = recall_kind_from_string(c.inference.recall);
    ic.demo_count = c.inference.demo_count;
    ic.seed = c.memory.seed;
    ic.max_in_flight = c.backend.max_in_flight;
    return ic;
}

inline std::vector<TaskItem> require_tasks(const RunConfig& c, Split split) {
    if (c.paths.tasks.empty()) throw ConfigError("paths.tasks is not set");
    const auto all = load_tasks(c.paths.tasks);
    auto items = select_split(all, split);
    if (items.empty())
        throw ConfigError("task file " + c.paths.tasks + " has no " + std::string(to_string(split)) + " items");
    return items;
}

inline std::vector<PrethinkRecord> load_dump(const std::filesystem::path& path) {
    return read_jsonl<PrethinkRecord>(path, [](const nlohmann::json& j) { return prethink_record_from_json(j); });
}

inline std::vector<MemoryEntry> load_entries(const std::filesystem::path& path) {
    return read_jsonl<MemoryEntry>(path, [](const nlohmann::json& j) { return memory_entry_from_json(j); });
}

inline MemoryPool require_pool(const RunConfig& c) {
    if (c.paths.pool.empty() || !std::filesystem::exists(c.paths.pool))
        throw ConfigError("memory pool not found: '" + c.paths.pool + "' (run build-memory first)");
    return load_pool(c.paths.pool);
}

// ------------------------------------------------------------- prethink ---

struct PrethinkSummary {
    std::size_t items = 0;
    std::size_t records = 0;
    std::size_t entries = 0;
    std::size_t failed = 0;
};

inline PrethinkSummary cmd_prethink(const RunConfig& c, Runtime& rt, std::ostream& out) {
    const auto items = require_tasks(c, Split::unlabeled);
    const auto demo_set = demos::resolve(c.inference.demos);
    PrethinkConfig pc;
    pc.num_paths = c.prethink.n;
    pc.temperature = c.prethink.temperature;
    pc.max_tokens = c.backend.max_tokens;
    pc.model_id = c.backend.model_id;
    pc.seed = c.memory.seed;
    pc.max_in_flight = c.backend.max_in_flight;
    const auto result = prethink_dataset(items, demo_set, rt.chat(), pc);

    write_jsonl(c.paths.dump, std::span<const PrethinkRecord>(result.records),
                [](const PrethinkRecord& r) { return to_json(r); });
    write_jsonl(c.paths.entries, std::span<const MemoryEntry>(result.entries),
                [](const MemoryEntry& e) { return to_json(e); });
    PrethinkSummary s{items.size(), result.records.size(), result.entries.size(), result.failed_items};
    out << "prethink: " << s.items << " questions, " << s.entries << " entries, " << s.failed << " failed\n";
    out << "dump: " << c.paths.dump << "\nentries: " << c.paths.entries << "\n";
    return s;
}

// --------------------------------------------------------- build-memory ---

inline std::vector<MemoryEntry> apply_filter(const RunConfig& c, std::vector<MemoryEntry> entries) {
    const auto& f = c.prethink.filter;
    if (f == "none") return entries;
    if (f == "entropy") return filter_by_entropy(entries, c.prethink.tau);
    if (f == "max_p") return filter_by_max_p(entries, c.prethink.rho);
    if (c.paths.golds.empty()) throw ConfigError("filter=gold needs paths.golds (a task file with gold answers)");
    return filter_by_gold(entries, gold_labels(load_tasks(c.paths.golds)));
}

inline MemoryPool cmd_build_memory(const RunConfig& c, Runtime& rt, std::ostream& out) {
    if (!std::filesystem::exists(c.paths.entries))
        throw ConfigError("entry file not found: '" + c.paths.entries + "' (run prethink first)");
    const auto all = load_entries(c.paths.entries);
    auto kept = apply_filter(c, all);
    if (kept.empty()) throw ConfigError("filter '" + c.prethink.filter + "' retained no entries");
    embed_entries(kept, rt.embedder());

    PoolMeta meta;
    meta.embedder_id = rt.embedder().model_id();
    meta.filter = c.prethink.filter;
    if (c.prethink.filter == "entropy" && std::isfinite(c.prethink.tau)) meta.tau = c.prethink.tau;
    meta.seed = c.memory.seed;
    meta.created_at = utc_timestamp();
    meta.source_dataset = c.paths.tasks;
    auto pool = build_pool(std::move(kept), c.memory.l, c.memory.seed, meta);
    save_pool(pool, c.paths.pool);
    out << "build-memory: kept " << pool.entries.size() << " of " << all.size() << " entries in " << pool.l
        << " clusters\npool: " << c.paths.pool << "\n";
    return pool;
}

// --------------------------------------------------------------- answer ---

struct AnswerOptions {
    std::string question;
    std::optional<std::string> format;  // defaults to the demonstration set's format
    std::vector<std::string> labels;
};

inline TaskFormat answer_format(const AnswerOptions& o, const DemoSet& demos) {
    if (!o.format) return demos.format;
    switch (format_kind_from_string(*o.format)) {
        case FormatKind::multi_choice:
            return o.labels.empty() ? TaskFormat::multi_choice_letters('E') : TaskFormat::multi_choice(o.labels);
        case FormatKind::classification:
            return TaskFormat::classification(o.labels);
        case FormatKind::abstractive:
            return TaskFormat::abstractive();
    }
    return TaskFormat::abstractive();
}

inline Prediction cmd_answer(const RunConfig& c, Runtime& rt, const AnswerOptions& o, std::ostream& out) {
    if (strings::trim(o.question).empty()) throw ConfigError("answer: empty question");
    const auto mode = c.inference_mode();
    const auto demo_set = demos::resolve(c.inference.demos);
    std::optional<MemoryPool> pool;
    if (uses_memory(mode.kind)) pool = require_pool(c);

    TaskItem item;
    item.question_id = "cli";
    item.question_text = o.question;
    item.format = answer_format(o, demo_set);
    InferenceContext ctx{rt.chat(), &rt.embedder(), pool ? &*pool : nullptr, &demo_set, inference_config(c, demo_set)};
    check_mode_inputs(mode.kind, ctx);
    auto p = answer_one(item, mode, ctx);
    if (!c.paths.trace.empty()) write_text(c.paths.trace, to_json(p, false).dump(2) + "\n");
    out << (p.parsed.ok() ? p.parsed.value : std::string("[unparseable]")) << "\n";
    return p;
}

// ----------------------------------------------------------------- eval ---

struct RunArtifacts {
    std::string run_id;
    std::filesystem::path dir;
};

inline RunArtifacts cmd_eval(const RunConfig& c, Runtime& rt, std::ostream& out) {
    const auto items = require_tasks(c, Split::test);
    const auto mode = c.inference_mode();
    const auto demo_set = demos::resolve(c.inference.demos);
    std::optional<MemoryPool> pool;
    if (uses_memory(mode.kind)) pool = require_pool(c);
    InferenceContext ctx{rt.chat(), &rt.embedder(), pool ? &*pool : nullptr, &demo_set, inference_config(c, demo_set)};
    const auto preds = predict_batch(items, mode, ctx);

    const auto snapshot = to_json(c);
    const auto run_id = make_run_id(snapshot);
    const auto report = evaluate(preds, items, run_id, snapshot, rt.call_counts());
    const auto dir = std::filesystem::path(c.paths.reports) / run_id;
    write_report(dir, report, preds);
    out << report.metric_name << ": " << fmt::format("{:.4f}", report.aggregate) << " over " << items.size()
        << " questions\nreport: " << (dir / "report.json").string() << "\n";
    return {run_id, dir};
}

// ---------------------------------------------------------------- sweep ---

struct SweepOptions {
    std::string kind = "threshold";  // threshold | memory | modes
    std::vector<double> taus{std::numeric_limits<double>::infinity(), 0.9, 0.6, 0.3, 0.0};
    std::vector<double> fractions{0.25, 0.5, 0.75, 1.0};
    std::vector<std::string> modes{"zero_shot_direct", "zero_shot_cot", "few_shot_direct", "few_shot_cot", "mot"};
};

inline RunArtifacts cmd_sweep(const RunConfig& c, Runtime& rt, const SweepOptions& o, std::ostream& out) {
    const auto demo_set = demos::resolve(c.inference.demos);
    EvalSetup setup{rt.chat(), rt.embedder(), inference_config(c, demo_set), c.inference_mode(), c.memory.l,
                    c.memory.seed, &demo_set};
    const auto snapshot = nlohmann::json{{"config", to_json(c)}, {"sweep", o.kind}};
    const auto run_id = make_run_id(snapshot);
    const auto dir = std::filesystem::path(c.paths.reports) / run_id;

    std::string csv;
    if (o.kind == "threshold") {
        if (!std::filesystem::exists(c.paths.dump))
            throw ConfigError("prethink dump not found: '" + c.paths.dump + "' (run prethink first)");
        const auto records = load_dump(c.paths.dump);
        const auto all = load_tasks(c.paths.tasks);
        const auto tests = select_split(all, Split::test);
        const auto golds = gold_labels(select_split(all, Split::unlabeled));
        csv = to_csv(std::span<const ThresholdRow>(sweep_threshold(records, o.taus, setup, tests, golds)));
        write_text(dir / "sweep_threshold.csv", csv);
    } else if (o.kind == "memory") {
        const auto pool = require_pool(c);
        const auto tests = require_tasks(c, Split::test);
        csv = to_csv(std::span<const MemorySizeRow>(sweep_memory_size(pool, o.fractions, c.memory.seed, setup, tests)));
        write_text(dir / "sweep_memory.csv", csv);
    } else if (o.kind == "modes") {
        std::vector<InferenceMode> modes;
        bool needs_pool = false;
        for (const auto& m : o.modes) {
            modes.push_back({mode_kind_from_string(m), std::nullopt});
            needs_pool = needs_pool || uses_memory(modes.back().kind);
        }
        std::optional<MemoryPool> pool;
        if (needs_pool) pool = require_pool(c);
        const std::vector<TaskSuite> suites{{std::filesystem::path(c.paths.tasks).stem().string(),
                                             require_tasks(c, Split::test), pool ? &*pool : nullptr, &demo_set,
                                             demo_set.style}};
        const auto table = compare_modes(suites, modes, setup);
        csv = to_csv(table);
        write_text(dir / "compare_modes.csv", csv);
        write_text(dir / "compare_modes.json", to_json(table).dump(2) + "\n");
    } else {
        throw ConfigError("sweep kind must be threshold, memory or modes, got '" + o.kind + "'");
    }
    write_text(dir / "config.json", snapshot.dump(2) + "\n");
    out << csv;
    return {run_id, dir};
}

} // namespace mot::cli
