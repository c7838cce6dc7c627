#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mot/backend/scripted.hpp"
#include "mot/demos.hpp"
#include "mot/harness.hpp"

using namespace mot;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / ("mot_harness_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir;
}

std::filesystem::path write_lines(const std::string& name, const std::vector<std::string>& lines) {
    const auto path = temp_dir() / name;
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
    return path;
}

std::size_t load_error_line(const std::filesystem::path& path) {
    try {
        load_tasks(path);
    } catch (const LoadError& e) {
        return e.line();
    }
    return 0;
}

TaskItem mc_item(std::string id, std::string gold) {
    TaskItem t;
    t.question_id = std::move(id);
    t.question_text = "Which? " + t.question_id;
    t.choices = {{"A", "one"}, {"B", "two"}};
    t.format = TaskFormat::multi_choice({"A", "B"});
    t.gold_answers = {std::move(gold)};
    return t;
}

Prediction prediction(std::string id, std::string value, bool failed = false) {
    Prediction p;
    p.question_id = std::move(id);
    p.mode = ModeKind::few_shot_cot;
    p.parsed = value.empty() ? ParsedAnswer::unparseable() : ParsedAnswer{ParseStatus::parsed, value, "The answer is"};
    p.failed = failed;
    return p;
}

} // namespace

TEST(Tasks, LoadsAllFormats) {
    const auto path = write_lines(
        "ok.jsonl",
        {R"({"question_id":"m1","question":"Pick (A) x (B) y","format":"multi_choice","choices":[["A","x"],["B","y"]],"golds":["B"]})",
         "",
         R"({"question_id":"c1","question":"Is it?","format":"classification","labels":["yes","no"],"golds":["yes"],"split":"test"})",
         R"({"question_id":"a1","question":"How far?","format":"abstractive","golds":["50 km","fifty km"]})",
         R"({"question_id":"u1","question":"Unlabeled?","format":"classification","labels":["yes","no"],"split":"unlabeled"})"});
    const auto items = load_tasks(path);
    ASSERT_EQ(items.size(), 4u);
    EXPECT_EQ(items[0].format, TaskFormat::multi_choice({"A", "B"}));
    EXPECT_EQ(items[1].format.label_set, (std::vector<std::string>{"yes", "no"}));
    EXPECT_EQ(items[2].gold_answers.size(), 2u);
    EXPECT_EQ(items[3].split, Split::unlabeled);
    EXPECT_EQ(select_split(items, Split::unlabeled).size(), 1u);
    EXPECT_EQ(gold_labels(items).size(), 3u);

    const auto copy = temp_dir() / "copy.jsonl";
    write_tasks(items, copy);
    EXPECT_EQ(load_tasks(copy), items);
}

TEST(Tasks, ErrorsCarryLineNumbers) {
    const std::string good = R"({"question_id":"g","question":"q","format":"abstractive","golds":["x"]})";
    const std::vector<std::string> bad_records{
        "{not json",
        R"({"question":"q","format":"abstractive","golds":["x"]})",
        R"({"question_id":"b","question":"q","format":"essay","golds":["x"]})",
        R"({"question_id":"b","question":"q","format":"multi_choice","golds":["A"]})",
        R"({"question_id":"b","question":"q","format":"multi_choice","choices":[["A","x"],["B","y"]],"labels":["A","C"],"golds":["A"]})",
        R"({"question_id":"b","question":"q","format":"abstractive","labels":["x"],"golds":["x"]})",
        R"({"question_id":"b","question":"   ","format":"abstractive","golds":["x"]})",
        R"({"question_id":"b","question":"q","format":"abstractive"})",
        R"({"question_id":"b","question":"q","format":"multi_choice","choices":[["A","x"],["B","y"]],"golds":["Z"]})",
        R"({"question_id":"b","question":"q","format":"abstractive","golds":["x"],"split":"train"})",
        good,
    };
    for (std::size_t i = 0; i < bad_records.size(); ++i) {
        const auto path = write_lines("bad.jsonl", {good, "", bad_records[i]});
        EXPECT_EQ(load_error_line(path), 3u) << bad_records[i];
    }
    EXPECT_THROW(load_tasks(temp_dir() / "missing.jsonl"), IoError);
}

TEST(Evaluate, AccuracyMean) {
    const std::vector<TaskItem> items{mc_item("1", "A"), mc_item("2", "B"), mc_item("3", "A"), mc_item("4", "B")};
    const std::vector<Prediction> preds{prediction("1", "A"), prediction("2", "A"), prediction("3", ""),
                                        prediction("4", "B", true)};
    const auto r = evaluate(preds, items, "run", {{"k", 1}});
    EXPECT_EQ(r.metric_name, "accuracy");
    EXPECT_DOUBLE_EQ(r.aggregate, 0.25);
    EXPECT_EQ(r.per_item[2].status, "unparseable");
    EXPECT_EQ(r.per_item[3].status, "failed");
    EXPECT_EQ(r.per_item[3].score, 0.0);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("count"), 4);
    EXPECT_EQ(j.at("config").at("k"), 1);
}

TEST(Evaluate, AbstractiveF1) {
    TaskItem a;
    a.question_id = "a";
    a.question_text = "?";
    a.gold_answers = {"7"};
    TaskItem b = a;
    b.question_id = "b";
    b.gold_answers = {"50 km"};
    const std::vector<TaskItem> items{a, b};
    const std::vector<Prediction> preds{prediction("a", "7 years"), prediction("b", "50 km")};
    const auto r = evaluate(preds, items);
    EXPECT_EQ(r.metric_name, "f1");
    EXPECT_NEAR(r.aggregate, (2.0 / 3.0 + 1.0) / 2.0, 1e-12);
}

TEST(Evaluate, RejectsMisalignment) {
    const std::vector<TaskItem> items{mc_item("1", "A"), mc_item("2", "B")};
    EXPECT_THROW(evaluate(std::vector<Prediction>{prediction("1", "A")}, items), ConfigError);
    EXPECT_THROW(evaluate(std::vector<Prediction>{prediction("2", "A"), prediction("1", "A")}, items), ConfigError);
    auto mixed = items;
    mixed[1].format = TaskFormat::abstractive();
    EXPECT_THROW(evaluate(std::vector<Prediction>{prediction("1", "A"), prediction("2", "B")}, mixed), ConfigError);
}

TEST(Sweep, MatchedMaxPThreshold) {
    std::vector<MemoryEntry> es(5);
    const double ps[] = {0.5, 1.0, 0.75, 1.0, 0.5625};
    for (std::size_t i = 0; i < 5; ++i) es[i].max_p = ps[i];
    EXPECT_EQ(matched_max_p_threshold(es, 1), 1.0);
    EXPECT_EQ(matched_max_p_threshold(es, 3), 0.75);
    EXPECT_EQ(matched_max_p_threshold(es, 9), 0.5);
    EXPECT_FALSE(matched_max_p_threshold(es, 0));
}

TEST(Sweep, ThresholdRowsFollowTauList) {
    // 12 unlabeled questions; entropy grows with the question number.
    std::vector<PrethinkRecord> records;
    std::vector<TaskItem> unlabeled;
    const auto mc = TaskFormat::multi_choice_letters('E');
    for (int i = 0; i < 12; ++i) {
        PrethinkRecord r;
        r.question_id = "u" + std::to_string(i);
        r.question_text = "topic " + std::to_string(i % 4) + " question " + std::to_string(i) + "?";
        r.format = mc;
        for (int s = 0; s < 16; ++s) r.samples.push_back(s < 16 - i ? "ok. The answer is (A)." : "no. The answer is (B).");
        records.push_back(r);
        TaskItem t;
        t.question_id = r.question_id;
        t.question_text = r.question_text;
        t.format = mc;
        t.gold_answers = {"A"};
        unlabeled.push_back(t);
    }
    ScriptedChatBackend chat([](const CompletionRequest& r, std::size_t) -> std::optional<std::string> {
        if (prompt_stage(r) == PromptStage::retrieval) return "The most helpful question is question 1.";
        return "The answer is (A).";
    });
    ScriptedEmbedder embedder(16);
    EvalSetup setup{chat, embedder, InferenceConfig{}, InferenceMode{ModeKind::mot, {}}, 4, 0, nullptr};
    const std::vector<double> taus{std::numeric_limits<double>::infinity(), 0.6, 0.3, 0.0};
    const std::vector<TaskItem> tests{mc_item("t1", "A"), mc_item("t2", "B")};
    const auto rows = sweep_threshold(records, taus, setup, tests, gold_labels(unlabeled));
    ASSERT_EQ(rows.size(), taus.size());
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i].retained_count, rows[i - 1].retained_count);
    EXPECT_EQ(rows[0].retained_count, 12u);
    EXPECT_EQ(rows[3].retained_count, 1u);
    EXPECT_DOUBLE_EQ(rows[0].filtered_out_ratio, 0.0);
    EXPECT_DOUBLE_EQ(*rows[0].retained_accuracy, 0.75);  // three questions vote B
    EXPECT_DOUBLE_EQ(*rows[0].metric, 0.5);
    EXPECT_FALSE(rows[3].metric);  // fewer than l entries
    for (const auto& r : rows) EXPECT_GE(r.maxp_retained_count, r.retained_count);

    const auto csv = to_csv(std::span<const ThresholdRow>(rows));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(taus.size() + 1));
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "tau,retained_count,filtered_out_ratio,retained_accuracy,maxp_threshold,maxp_retained_count,"
              "maxp_retained_accuracy,metric");
    EXPECT_EQ(csv.substr(csv.find('\n') + 1, 4), "inf,");
    EXPECT_THROW(sweep_threshold(records, std::vector<double>{}, setup, tests), ConfigError);
}

TEST(Sweep, MemorySizeAndCompareModes) {
    ScriptedEmbedder embedder(16);
    std::vector<MemoryEntry> entries;
    for (int i = 0; i < 20; ++i) {
        MemoryEntry e;
        e.question_id = "e" + std::to_string(i);
        e.question_text = "memory topic " + std::to_string(i % 5) + " item " + std::to_string(i);
        e.rationale_text = "The answer is (A).";
        e.answer = "A";
        entries.push_back(e);
    }
    embed_entries(entries, embedder);
    const auto pool = build_pool(entries, 4, 0);
    ScriptedChatBackend chat([](const CompletionRequest& r, std::size_t) -> std::optional<std::string> {
        if (prompt_stage(r) == PromptStage::retrieval) return "The most helpful question is question 1.";
        return "The answer is (A).";
    });
    EvalSetup setup{chat, embedder, InferenceConfig{}, InferenceMode{ModeKind::mot, {}}, 4, 0, nullptr};
    const std::vector<TaskItem> tests{mc_item("t1", "A"), mc_item("t2", "A"), mc_item("t3", "B")};

    const std::vector<double> fractions{0.25, 0.5, 1.0};
    const auto rows = sweep_memory_size(pool, fractions, 3, setup, tests);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].pool_size, 5u);
    EXPECT_EQ(rows[2].pool_size, 20u);
    EXPECT_NEAR(rows[1].metric, 2.0 / 3.0, 1e-12);
    EXPECT_THROW(sweep_memory_size(pool, std::vector<double>{1.5}, 0, setup, tests), ConfigError);

    const auto aqua = demos::aqua();
    const std::vector<TaskSuite> suites{{"toy", tests, &pool, &aqua, {}}, {"toy2", tests, &pool, &aqua, {}}};
    const std::vector<InferenceMode> modes{{ModeKind::mot, {}}, {ModeKind::few_shot_cot, SelfConsistency{3, 0.7}}};
    const auto table = compare_modes(suites, modes, setup);
    EXPECT_EQ(table.modes, (std::vector<std::string>{"mot", "few_shot_cot+sc3"}));
    EXPECT_NEAR(table.average(0), 2.0 / 3.0, 1e-12);
    EXPECT_NE(table.cells[0][0].config_hash, table.cells[1][0].config_hash);
    EXPECT_NE(table.cells[0][0].config_hash, table.cells[0][1].config_hash);
    const auto csv = to_csv(table);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "mode,toy,toy2,avg");
    EXPECT_EQ(to_json(table).size(), 2u);
}

TEST(Files, ReportAndJsonl) {
    const auto dir = temp_dir() / "report";
    const std::vector<TaskItem> items{mc_item("1", "A")};
    const std::vector<Prediction> preds{prediction("1", "A")};
    write_report(dir, evaluate(preds, items, "r1"), preds);
    std::ifstream in(dir / "report.json");
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("run_id"), "r1");
    EXPECT_DOUBLE_EQ(j.at("aggregate").get<double>(), 1.0);
    const auto rows = read_jsonl<nlohmann::json>(dir / "predictions.jsonl", [](const nlohmann::json& x) { return x; });
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].at("answer"), "A");

    std::ofstream(dir / "bad.jsonl") << "{}\n{oops\n";
    try {
        read_jsonl<nlohmann::json>(dir / "bad.jsonl", [](const nlohmann::json& x) { return x; });
        FAIL();
    } catch (const LoadError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_EQ(config_hash({{"a", 1}}).size(), 12u);
    EXPECT_NE(config_hash({{"a", 1}}), config_hash({{"a", 2}}));
}
