#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>

#include "mot/inference.hpp"
#include "mot/memory.hpp"
#include "mot/parsing.hpp"
#include "mot/prethink.hpp"
#include "mot/task.hpp"
#include "mot/util/digest.hpp"

namespace mot {

// ---------------------------------------------------------------- tasks ---

namespace detail {

inline TaskItem task_from_json(const nlohmann::json& j, std::size_t line) {
    const auto fail = [line](const std::string& what) { return LoadError(line, what); };
    if (!j.is_object()) throw fail("task record must be a JSON object");
    TaskItem item;
    try {
        item.question_id = j.at("question_id").get<std::string>();
        item.question_text = j.at("question").get<std::string>();
        const auto kind = format_kind_from_string(j.at("format").get<std::string>());
        if (j.contains("choices") && !j["choices"].is_null()) {
            for (const auto& c : j["choices"]) {
                if (!c.is_array() || c.size() != 2) throw fail("each choice must be [letter, text]");
                item.choices.push_back({c[0].get<std::string>(), c[1].get<std::string>()});
            }
        }
        std::vector<std::string> labels;
        if (j.contains("labels") && !j["labels"].is_null()) labels = j["labels"].get<std::vector<std::string>>();
        if (j.contains("golds") && !j["golds"].is_null())
            item.gold_answers = j["golds"].get<std::vector<std::string>>();
        const auto split = j.value("split", std::string{"test"});
        if (split == "unlabeled") item.split = Split::unlabeled;
        else if (split == "test") item.split = Split::test;
        else throw fail("unknown split '" + split + "'");

        switch (kind) {
            case FormatKind::multi_choice: {
                if (item.choices.empty()) throw fail("multi_choice item '" + item.question_id + "' has no choices");
                std::vector<std::string> letters;
                for (const auto& c : item.choices) letters.push_back(c.letter);
                if (!labels.empty() && labels != letters)
                    throw fail("labels do not match choice letters for '" + item.question_id + "'");
                item.format = TaskFormat::multi_choice(std::move(letters));
                break;
            }
            case FormatKind::classification:
                item.format = TaskFormat::classification(std::move(labels));
                break;
            case FormatKind::abstractive:
                if (!labels.empty()) throw fail("abstractive item '" + item.question_id + "' takes no labels");
                item.format = TaskFormat::abstractive();
                break;
        }
    } catch (const LoadError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("schema violation: ") + e.what());
    } catch (const ConfigError& e) {
        throw fail(e.what());
    }

    if (strings::trim(item.question_id).empty()) throw fail("empty question_id");
    if (strings::trim(item.question_text).empty()) throw fail("empty question for '" + item.question_id + "'");
    if (item.split == Split::test && item.gold_answers.empty())
        throw fail("test item '" + item.question_id + "' has no gold answers");
    for (const auto& g : item.gold_answers)
        if (canonical_gold(g, item.format).empty())
            throw fail("gold '" + g + "' is not a valid answer for '" + item.question_id + "'");
    return item;
}

} // namespace detail

/// Reads the task JSONL format. Blank lines are skipped; ids must be unique.
inline std::vector<TaskItem> load_tasks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open task file " + path.string());
    std::vector<TaskItem> items;
    std::map<std::string, std::size_t> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (strings::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(lineno, std::string("invalid JSON: ") + e.what());
        }
        auto item = detail::task_from_json(j, lineno);
        if (auto [it, inserted] = seen.emplace(item.question_id, lineno); !inserted)
            throw LoadError(lineno, "duplicate question_id '" + item.question_id + "' (first on line " +
                                        std::to_string(it->second) + ")");
        items.push_back(std::move(item));
    }
    return items;
}

inline nlohmann::json to_json(const TaskItem& t) {
    nlohmann::json j = {{"question_id", t.question_id},
                        {"question", t.question_text},
                        {"format", to_string(t.format.kind)},
                        {"split", to_string(t.split)}};
    if (!t.choices.empty()) {
        nlohmann::json cs = nlohmann::json::array();
        for (const auto& c : t.choices) cs.push_back({c.letter, c.text});
        j["choices"] = std::move(cs);
    }
    if (t.format.kind == FormatKind::classification) j["labels"] = t.format.label_set;
    if (!t.gold_answers.empty()) j["golds"] = t.gold_answers;
    return j;
}

inline void write_tasks(std::span<const TaskItem> items, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write task file " + path.string());
    for (const auto& t : items) out << to_json(t).dump() << '\n';
}

inline std::vector<TaskItem> select_split(std::span<const TaskItem> items, Split split) {
    std::vector<TaskItem> out;
    for (const auto& t : items)
        if (t.split == split) out.push_back(t);
    return out;
}

inline std::map<std::string, GoldLabel> gold_labels(std::span<const TaskItem> items) {
    std::map<std::string, GoldLabel> out;
    for (const auto& t : items)
        if (!t.gold_answers.empty()) out[t.question_id] = GoldLabel{t.gold_answers, t.format};
    return out;
}

// ----------------------------------------------------------- evaluation ---

struct ItemScore {
    std::string question_id;
    double score = 0.0;
    std::string answer;
    std::string status;
};

struct EvalReport {
    std::string run_id;
    std::string mode;
    std::string metric_name;
    double aggregate = 0.0;
    std::vector<ItemScore> per_item;
    nlohmann::json config_snapshot = nlohmann::json::object();
    nlohmann::json call_counts = nlohmann::json::object();
};

inline double score_answer(const ParsedAnswer& parsed, const TaskItem& item) {
    if (item.gold_answers.empty()) throw ConfigError("no gold answers for '" + item.question_id + "'");
    if (item.format.kind == FormatKind::abstractive)
        return parsed.ok() ? token_f1(parsed.value, item.gold_answers) : 0.0;
    int best = 0;
    for (const auto& g : item.gold_answers) best = std::max(best, exact_match(parsed, g, item.format));
    return best;
}

/// Accuracy for label formats, max-over-golds token F1 for abstractive.
/// Failed predictions score 0.
inline EvalReport evaluate(std::span<const Prediction> predictions, std::span<const TaskItem> items,
                           std::string run_id = {}, nlohmann::json config_snapshot = nlohmann::json::object(),
                           nlohmann::json call_counts = nlohmann::json::object()) {
    if (predictions.size() != items.size())
        throw ConfigError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(items.size()) + " items");
    EvalReport r;
    r.run_id = std::move(run_id);
    r.config_snapshot = std::move(config_snapshot);
    r.call_counts = std::move(call_counts);
    if (items.empty()) {
        r.metric_name = "accuracy";
        return r;
    }
    const bool abstractive = items.front().format.kind == FormatKind::abstractive;
    for (const auto& it : items)
        if ((it.format.kind == FormatKind::abstractive) != abstractive)
            throw ConfigError("evaluate: cannot mix abstractive and label-format items in one report");
    r.metric_name = abstractive ? "f1" : "accuracy";
    r.mode = std::string(to_string(predictions.front().mode));

    double sum = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& p = predictions[i];
        if (p.question_id != items[i].question_id)
            throw ConfigError("evaluate: prediction '" + p.question_id + "' does not align with item '" +
                              items[i].question_id + "'");
        const double s = p.failed ? 0.0 : score_answer(p.parsed, items[i]);
        sum += s;
        r.per_item.push_back(
            {p.question_id, s, p.parsed.value, p.failed ? "failed" : p.parsed.ok() ? "parsed" : "unparseable"});
    }
    r.aggregate = sum / static_cast<double>(items.size());
    return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& s : r.per_item)
        items.push_back({{"question_id", s.question_id}, {"score", s.score}, {"answer", s.answer}, {"status", s.status}});
    return {{"run_id", r.run_id},
            {"mode", r.mode},
            {"metric", r.metric_name},
            {"aggregate", r.aggregate},
            {"count", r.per_item.size()},
            {"per_item", std::move(items)},
            {"config", r.config_snapshot},
            {"call_counts", r.call_counts}};
}

inline std::string config_hash(const nlohmann::json& snapshot) { return sha256_hex(snapshot.dump()).substr(0, 12); }

// --------------------------------------------------------------- sweeps ---

/// Backends and settings shared by every evaluation cell of a sweep.
struct EvalSetup {
    ChatBackend& chat;
    EmbeddingBackend& embedder;
    InferenceConfig inference;
    InferenceMode mode;
    std::size_t l = 4;
    std::uint64_t seed = 0;
    const DemoSet* demos = nullptr;
};

inline double run_metric(const EvalSetup& setup, const MemoryPool* pool, std::span<const TaskItem> test_items,
                         const InferenceMode& mode) {
    InferenceContext ctx{setup.chat, &setup.embedder, pool, setup.demos, setup.inference};
    const auto preds = predict_batch(test_items, mode, ctx);
    return evaluate(preds, test_items).aggregate;
}

/// Mean correctness of entries against gold (exact match, or token F1 for
/// abstractive tasks).
inline std::optional<double> retained_accuracy(std::span<const MemoryEntry> entries,
                                               const std::map<std::string, GoldLabel>& golds) {
    if (entries.empty() || golds.empty()) return std::nullopt;
    double sum = 0.0;
    for (const auto& e : entries) {
        const auto it = golds.find(e.question_id);
        if (it == golds.end()) return std::nullopt;
        TaskItem t;
        t.question_id = e.question_id;
        t.gold_answers = it->second.answers;
        t.format = it->second.format;
        sum += score_answer(ParsedAnswer{ParseStatus::parsed, e.answer, {}}, t);
    }
    return sum / static_cast<double>(entries.size());
}

struct ThresholdRow {
    double tau = 0.0;
    std::size_t retained_count = 0;
    double filtered_out_ratio = 0.0;
    std::optional<double> retained_accuracy;
    std::optional<double> maxp_threshold;
    std::size_t maxp_retained_count = 0;
    std::optional<double> maxp_retained_accuracy;
    std::optional<double> metric;
};

/// Max-P filtering at the threshold whose retained set best matches `count`.
inline std::optional<double> matched_max_p_threshold(std::span<const MemoryEntry> entries, std::size_t count) {
    if (count == 0 || entries.empty()) return std::nullopt;
    std::vector<double> ps;
    for (const auto& e : entries) ps.push_back(e.max_p);
    std::sort(ps.begin(), ps.end(), std::greater<>());
    return ps[std::min(count, ps.size()) - 1];
}

/// Offline threshold sweep over a prethink dump: re-filter, rebuild the
/// pool and re-evaluate per tau. No sampling calls are issued.
inline std::vector<ThresholdRow> sweep_threshold(std::span<const PrethinkRecord> records, std::span<const double> taus,
                                                 const EvalSetup& setup, std::span<const TaskItem> test_items,
                                                 const std::map<std::string, GoldLabel>& golds = {},
                                                 std::span<const std::string> triggers = default_triggers()) {
    if (taus.empty()) throw ConfigError("sweep_threshold: empty tau list");
    auto all = entries_from_records(records, setup.seed, triggers);
    if (!all.empty()) embed_entries(all, setup.embedder);

    std::vector<ThresholdRow> rows;
    for (const double tau : taus) {
        ThresholdRow row;
        row.tau = tau;
        const auto kept = filter_by_entropy(all, tau);
        row.retained_count = kept.size();
        row.filtered_out_ratio =
            all.empty() ? 0.0 : 1.0 - static_cast<double>(kept.size()) / static_cast<double>(all.size());
        row.retained_accuracy = retained_accuracy(kept, golds);
        if (auto rho = matched_max_p_threshold(all, kept.size())) {
            const auto by_p = filter_by_max_p(all, *rho);
            row.maxp_threshold = rho;
            row.maxp_retained_count = by_p.size();
            row.maxp_retained_accuracy = retained_accuracy(by_p, golds);
        }
        if (!test_items.empty() && kept.size() >= setup.l) {
            PoolMeta meta;
            meta.embedder_id = setup.embedder.model_id();
            if (std::isfinite(tau)) meta.tau = tau;
            const auto pool = build_pool(kept, setup.l, setup.seed, meta);
            row.metric = run_metric(setup, &pool, test_items, setup.mode);
        }
        rows.push_back(row);
    }
    return rows;
}

struct MemorySizeRow {
    double fraction = 0.0;
    std::size_t pool_size = 0;
    double metric = 0.0;
};

inline std::vector<MemorySizeRow> sweep_memory_size(const MemoryPool& pool, std::span<const double> fractions,
                                                    std::uint64_t seed, const EvalSetup& setup,
                                                    std::span<const TaskItem> test_items) {
    if (fractions.empty()) throw ConfigError("sweep_memory_size: empty fraction list");
    for (double f : fractions)
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep_memory_size: fraction must be in (0, 1]");
    std::vector<MemorySizeRow> rows;
    for (double f : fractions) {
        const auto sub = subsample_pool(pool, f, seed);
        rows.push_back({f, sub.entries.size(), run_metric(setup, &sub, test_items, setup.mode)});
    }
    return rows;
}

/// One evaluation suite for compare_modes: a task's test items plus what
/// the modes may draw on.
struct TaskSuite {
    std::string name;
    std::vector<TaskItem> items;
    const MemoryPool* pool = nullptr;
    const DemoSet* demos = nullptr;
    PromptStyle style;
};

struct CompareCell {
    double aggregate = 0.0;
    std::string metric;
    std::string config_hash;
};

struct CompareTable {
    std::vector<std::string> modes;
    std::vector<std::string> tasks;
    std::vector<std::vector<CompareCell>> cells;  // [mode][task]

    double average(std::size_t mode_row) const {
        if (tasks.empty()) return 0.0;
        double s = 0.0;
        for (const auto& c : cells[mode_row]) s += c.aggregate;
        return s / static_cast<double>(tasks.size());
    }
};

/// Runs every mode on every suite (rows = modes, columns = tasks).
inline CompareTable compare_modes(std::span<const TaskSuite> suites, std::span<const InferenceMode> modes,
                                  const EvalSetup& setup) {
    CompareTable table;
    for (const auto& s : suites) table.tasks.push_back(s.name);
    for (const auto& m : modes) {
        std::string label(to_string(m.kind));
        if (m.self_consistency) label += "+sc" + std::to_string(m.self_consistency->num_paths);
        table.modes.push_back(label);
        std::vector<CompareCell> row;
        for (const auto& suite : suites) {
            InferenceConfig cfg = setup.inference;
            cfg.style = suite.style;
            InferenceContext ctx{setup.chat, &setup.embedder, suite.pool, suite.demos, cfg};
            const auto preds = predict_batch(suite.items, m, ctx);
            const auto report = evaluate(preds, suite.items);
            nlohmann::json snap = {{"task", suite.name},
                                   {"mode", to_string(m.kind)},
                                   {"k", cfg.k},
                                   {"l", setup.l},
                                   {"seed", setup.seed},
                                   {"model_id", cfg.model_id},
                                   {"recall", to_string(cfg.recall)},
                                   {"demo_count", cfg.demo_count}};
            if (m.self_consistency)
                snap["self_consistency"] = {m.self_consistency->num_paths, m.self_consistency->temperature};
            row.push_back({report.aggregate, report.metric_name, config_hash(snap)});
        }
        table.cells.push_back(std::move(row));
    }
    return table;
}

// ------------------------------------------------------------------ CSV ---

namespace detail {
inline std::string csv_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{:.6f}", v);
}
inline std::string csv_optional(const std::optional<double>& v) { return v ? csv_number(*v) : std::string{}; }
} // namespace detail

inline std::string to_csv(std::span<const ThresholdRow> rows) {
    std::string out =
        "tau,retained_count,filtered_out_ratio,retained_accuracy,maxp_threshold,maxp_retained_count,"
        "maxp_retained_accuracy,metric\n";
    for (const auto& r : rows) {
        out += detail::csv_number(r.tau) + "," + std::to_string(r.retained_count) + "," +
               detail::csv_number(r.filtered_out_ratio) + "," + detail::csv_optional(r.retained_accuracy) + "," +
               detail::csv_optional(r.maxp_threshold) + "," + std::to_string(r.maxp_retained_count) + "," +
               detail::csv_optional(r.maxp_retained_accuracy) + "," + detail::csv_optional(r.metric) + "\n";
    }
    return out;
}

inline std::string to_csv(std::span<const MemorySizeRow> rows) {
    std::string out = "fraction,pool_size,metric\n";
    for (const auto& r : rows)
        out += detail::csv_number(r.fraction) + "," + std::to_string(r.pool_size) + "," + detail::csv_number(r.metric) +
               "\n";
    return out;
}

inline std::string to_csv(const CompareTable& t) {
    std::string out = "mode";
    for (const auto& name : t.tasks) out += "," + name;
    out += ",avg\n";
    for (std::size_t m = 0; m < t.modes.size(); ++m) {
        out += t.modes[m];
        for (const auto& c : t.cells[m]) out += "," + detail::csv_number(c.aggregate);
        out += "," + detail::csv_number(t.average(m)) + "\n";
    }
    return out;
}

inline nlohmann::json to_json(const CompareTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t m = 0; m < t.modes.size(); ++m) {
        nlohmann::json cells = nlohmann::json::object();
        for (std::size_t k = 0; k < t.tasks.size(); ++k)
            cells[t.tasks[k]] = {{"aggregate", t.cells[m][k].aggregate},
                                 {"metric", t.cells[m][k].metric},
                                 {"config_hash", t.cells[m][k].config_hash}};
        rows.push_back({{"mode", t.modes[m]}, {"cells", std::move(cells)}, {"avg", t.average(m)}});
    }
    return rows;
}

// -------------------------------------------------------------- writing ---

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write on " + path.string());
}

template <class T, class F>
void write_jsonl(const std::filesystem::path& path, std::span<const T> rows, F&& to_json_fn) {
    std::string text;
    for (const auto& r : rows) text += to_json_fn(r).dump() + "\n";
    write_text(path, text);
}

template <class T, class F>
std::vector<T> read_jsonl(const std::filesystem::path& path, F&& from_json_fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<T> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (strings::trim(line).empty()) continue;
        try {
            out.push_back(from_json_fn(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(lineno, path.string() + ": " + e.what());
        }
    }
    return out;
}

inline void write_report(const std::filesystem::path& dir, const EvalReport& report,
                         std::span<const Prediction> predictions) {
    write_text(dir / "report.json", to_json(report).dump(2) + "\n");
    write_jsonl(dir / "predictions.jsonl", predictions, [](const Prediction& p) { return to_json(p); });
}

} // namespace mot
