#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mot/backend/scripted.hpp"
#include "mot/demos.hpp"
#include "mot/prethink.hpp"

using namespace mot;

namespace {

const TaskFormat mc = TaskFormat::multi_choice_letters('E');

std::vector<ThoughtSample> samples_from(const std::vector<std::string>& answers) {
    std::vector<ThoughtSample> out;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        const auto text = "path " + std::to_string(i) + ". The answer is (" + answers[i] + ").";
        out.push_back({i, text, answers[i].empty() ? ParsedAnswer::unparseable() : parse_answer(text, mc)});
    }
    return out;
}

// Direct evaluation of -sum p ln p, written independently of the library.
double oracle_entropy(const std::vector<std::size_t>& counts) {
    double total = 0;
    for (auto c : counts) total += static_cast<double>(c);
    double h = 0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / total;
        h += -p * std::log(p);
    }
    return h;
}

MemoryEntry entry(std::string id, double entropy, double max_p, std::string answer = "A") {
    MemoryEntry e;
    e.question_id = std::move(id);
    e.question_text = "q " + e.question_id;
    e.rationale_text = "The answer is " + answer + ".";
    e.answer = std::move(answer);
    e.entropy = entropy;
    e.max_p = max_p;
    return e;
}

TaskItem item(std::string id, std::string q) {
    TaskItem t;
    t.question_id = std::move(id);
    t.question_text = std::move(q);
    t.format = mc;
    t.split = Split::unlabeled;
    return t;
}

} // namespace

TEST(Vote, StrictMajority) {
    const auto v = majority_vote(samples_from({"A", "B", "A", "C"}));
    EXPECT_EQ(v.winner, "A");
    EXPECT_EQ(v.counts, (std::map<std::string, std::size_t>{{"A", 2}, {"B", 1}, {"C", 1}}));
    EXPECT_DOUBLE_EQ(v.max_p, 0.5);
}

TEST(Vote, TieGoesToFirstDecoded) {
    EXPECT_EQ(majority_vote(samples_from({"A", "A", "B", "B"})).winner, "A");
    EXPECT_EQ(majority_vote(samples_from({"B", "A", "A", "B"})).winner, "B");
    EXPECT_DOUBLE_EQ(majority_vote(samples_from({"A", "A", "B", "B"})).max_p, 0.5);
}

TEST(Vote, Unanimous) {
    const auto v = majority_vote(samples_from(std::vector<std::string>(16, "A")));
    EXPECT_EQ(v.winner, "A");
    EXPECT_EQ(v.entropy, 0.0);
    EXPECT_FALSE(std::signbit(v.entropy));
    EXPECT_DOUBLE_EQ(v.max_p, 1.0);
}

TEST(Vote, UnparseableExcluded) {
    const auto v = majority_vote(samples_from({"", "B", "", "B", "C"}));
    EXPECT_EQ(v.total_parsed, 3u);
    EXPECT_EQ(v.winner, "B");
    EXPECT_NEAR(v.max_p, 2.0 / 3.0, 1e-15);
    const auto none = majority_vote(samples_from({"", ""}));
    EXPECT_TRUE(none.empty());
    EXPECT_THROW(majority_vote(std::vector<ThoughtSample>{}), PreconditionError);
}

TEST(Entropy, Examples) {
    EXPECT_EQ(answer_entropy({{"A", 16}}, 16), 0.0);
    EXPECT_NEAR(answer_entropy({{"A", 8}, {"B", 8}}, 16), std::log(2.0), 1e-15);
    EXPECT_NEAR(answer_entropy({{"A", 8}, {"B", 4}, {"C", 4}}, 16), 1.0397, 5e-5);
    EXPECT_NEAR(answer_entropy({{"A", 9}, {"B", 7}}, 16), 0.6853, 5e-5);
    EXPECT_THROW(answer_entropy({}, 0), DomainError);
}

TEST(Entropy, MatchesOracleAndVoteIsConsistent) {
    SplitMix64 rng(17);
    for (int trial = 0; trial < 500; ++trial) {
        const auto n = 1 + rng.uniform_index(32);
        std::vector<std::string> answers;
        for (std::size_t i = 0; i < n; ++i) answers.emplace_back(1, static_cast<char>('A' + rng.uniform_index(5)));
        const auto v = majority_vote(samples_from(answers));
        std::vector<std::size_t> counts;
        std::size_t top = 0;
        for (const auto& [a, c] : v.counts) {
            counts.push_back(c);
            top = std::max(top, c);
        }
        EXPECT_NEAR(v.entropy, oracle_entropy(counts), 1e-12);
        EXPECT_EQ(v.winner_count, top);
        EXPECT_DOUBLE_EQ(v.max_p, static_cast<double>(v.winner_count) / static_cast<double>(v.total_parsed));
        EXPECT_EQ(v.entropy == 0.0, v.counts.size() == 1);
    }
}

TEST(RetainedPath, SingletonAndDeterminism) {
    const auto s = samples_from({"B", "A", "A", "C", "A"});
    const auto v = majority_vote(s);
    const auto p = select_retained_path(s, v, 99);
    EXPECT_EQ(p.answer.value, "A");
    EXPECT_EQ(select_retained_path(s, v, 99), p);

    const auto single = samples_from({"", "D", ""});
    EXPECT_EQ(select_retained_path(single, majority_vote(single), 1).path_index, 1u);
}

TEST(RetainedPath, UniformOverSeeds) {
    const auto s = samples_from(std::vector<std::string>(16, "D"));
    const auto v = majority_vote(s);
    std::vector<double> hist(16, 0.0);
    const int seeds = 10000;
    for (int seed = 0; seed < seeds; ++seed) ++hist[select_retained_path(s, v, static_cast<std::uint64_t>(seed)).path_index];
    const double expected = seeds / 16.0;
    double chi2 = 0.0;
    for (double h : hist) chi2 += (h - expected) * (h - expected) / expected;
    // Upper 1% point of chi-square with 15 degrees of freedom.
    EXPECT_LT(chi2, 30.578);
}

TEST(Filter, EntropyExamples) {
    // Entropy of a 15:1 split, evaluated directly.
    const double h15 = -(15.0 / 16 * std::log(15.0 / 16) + 1.0 / 16 * std::log(1.0 / 16));
    const std::vector<MemoryEntry> es{entry("a", 0.0, 1.0), entry("b", h15, 15.0 / 16), entry("c", std::log(2.0), 0.5)};
    const auto kept = filter_by_entropy(es, 0.3);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].question_id, "a");
    EXPECT_EQ(kept[1].question_id, "b");
    EXPECT_EQ(filter_by_entropy(es, std::numeric_limits<double>::infinity()), es);
    EXPECT_EQ(filter_by_entropy(es, 0.0).size(), 1u);
    EXPECT_THROW(filter_by_entropy(es, -1.0), PreconditionError);
}

TEST(Filter, EntropyMonotone) {
    SplitMix64 rng(8);
    std::vector<MemoryEntry> es;
    for (int i = 0; i < 200; ++i) es.push_back(entry(std::to_string(i), rng.uniform01() * 1.5, 0.5));
    std::vector<double> taus{0.0, 0.1, 0.3, 0.6, 0.9, 1.2, 2.0};
    for (std::size_t i = 0; i + 1 < taus.size(); ++i) {
        const auto small = filter_by_entropy(es, taus[i]);
        const auto big = filter_by_entropy(es, taus[i + 1]);
        std::set<std::string> ids;
        for (const auto& e : big) ids.insert(e.question_id);
        for (const auto& e : small) EXPECT_TRUE(ids.count(e.question_id));
    }
}

TEST(Filter, MaxP) {
    const std::vector<MemoryEntry> es{entry("a", 0.7, 0.5), entry("b", 0.8, 0.4), entry("c", 0.0, 1.0)};
    const auto half = filter_by_max_p(es, 0.5);
    ASSERT_EQ(half.size(), 2u);
    EXPECT_EQ(half[0].question_id, "a");
    const auto unanimous = filter_by_max_p(es, 1.0);
    ASSERT_EQ(unanimous.size(), 1u);
    EXPECT_EQ(unanimous[0].question_id, "c");
    EXPECT_THROW(filter_by_max_p(es, 0.0), PreconditionError);
}

TEST(Filter, Gold) {
    const auto yes_no = TaskFormat::classification({"yes", "no"});
    const std::vector<MemoryEntry> es{entry("a", 0, 1, "B"), entry("b", 0, 1, "no"), entry("c", 0, 1, "50 km")};
    const std::map<std::string, GoldLabel> golds{{"a", {{"B"}, mc}},
                                                 {"b", {{"yes"}, yes_no}},
                                                 {"c", {{"50 km"}, TaskFormat::abstractive()}}};
    const auto kept = filter_by_gold(es, golds);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].question_id, "a");
    EXPECT_EQ(kept[1].question_id, "c");
    for (const auto& e : kept) EXPECT_EQ(e.source, MemorySource::gold_filtered);
    EXPECT_THROW(filter_by_gold(es, {{"a", {{"B"}, mc}}}), ConfigError);
}

TEST(Entry, JsonRoundTrip) {
    auto e = entry("x", 0.25, 0.75);
    e.embedding = EmbeddingVector::normalized({1.0, 2.0, 2.0});
    e.cluster_id = 3;
    e.n_effective = 12;
    EXPECT_EQ(memory_entry_from_json(to_json(e)), e);
    auto bare = entry("y", 0.0, 1.0);
    EXPECT_EQ(memory_entry_from_json(to_json(bare)), bare);
}

TEST(Prethink, UnanimousCorpus) {
    ScriptedChatBackend backend([](const CompletionRequest&, std::size_t) -> std::optional<std::string> {
        return "Some reasoning. The answer is (C).";
    });
    std::vector<TaskItem> items;
    for (int i = 0; i < 10; ++i) items.push_back(item("q" + std::to_string(i), "Question " + std::to_string(i) + "?"));
    const auto out = prethink_dataset(items, demos::aqua(), backend, PrethinkConfig{});
    ASSERT_EQ(out.entries.size(), 10u);
    for (const auto& e : out.entries) {
        EXPECT_EQ(e.entropy, 0.0);
        EXPECT_EQ(e.answer, "C");
        EXPECT_EQ(e.n_effective, 16u);
    }
    EXPECT_EQ(backend.request_count(), 10u);
    EXPECT_EQ(backend.sample_count(), 160u);
}

TEST(Prethink, SplitAndDropAndOrder) {
    // q-split: 9 paths say A, 7 say B. q-none: nothing parses.
    ScriptedChatBackend backend([](const CompletionRequest& r, std::size_t i) -> std::optional<std::string> {
        const auto target = prompt_target(r);
        if (target.find("none") != std::string::npos) return "no idea";
        if (target.find("split") != std::string::npos) return i < 9 ? "x. The answer is (A)." : "y. The answer is (B).";
        return "The answer is (E).";
    });
    const std::vector<TaskItem> items{item("q1", "first?"), item("q2", "split?"), item("q3", "none?"), item("q4", "last?")};
    PrethinkConfig cfg;
    cfg.max_in_flight = 4;
    const auto out = prethink_dataset(items, demos::aqua(), backend, cfg);
    ASSERT_EQ(out.entries.size(), 3u);
    EXPECT_EQ(out.entries[0].question_id, "q1");
    EXPECT_EQ(out.entries[1].question_id, "q2");
    EXPECT_EQ(out.entries[2].question_id, "q4");
    EXPECT_NEAR(out.entries[1].entropy, oracle_entropy({9, 7}), 1e-12);
    EXPECT_NEAR(out.entries[1].entropy, 0.6853, 5e-5);
    EXPECT_EQ(out.records.size(), 4u);
    // Retained path re-parses to the stored answer.
    for (const auto& e : out.entries) EXPECT_EQ(parse_answer(e.rationale_text, mc).value, e.answer);
}

TEST(Prethink, DumpReplaysToIdenticalEntries) {
    ScriptedChatBackend backend([](const CompletionRequest&, std::size_t i) -> std::optional<std::string> {
        return "path " + std::to_string(i) + ". The answer is (" + std::string(1, "AB"[i % 3 == 0]) + ").";
    });
    std::vector<TaskItem> items;
    for (int i = 0; i < 6; ++i) items.push_back(item("id" + std::to_string(i), "Q" + std::to_string(i)));
    PrethinkConfig cfg;
    cfg.seed = 21;
    const auto out = prethink_dataset(items, demos::aqua(), backend, cfg);
    std::vector<PrethinkRecord> reloaded;
    for (const auto& r : out.records) reloaded.push_back(prethink_record_from_json(nlohmann::json::parse(to_json(r).dump())));
    EXPECT_EQ(entries_from_records(reloaded, 21), out.entries);
    EXPECT_EQ(reloaded[0].vote, out.records[0].vote);
}

TEST(Prethink, RequestShape) {
    ScriptedChatBackend backend([](const CompletionRequest&, std::size_t) -> std::optional<std::string> {
        return "The answer is (A).";
    });
    backend.set_logging(true);
    prethink_dataset(std::vector<TaskItem>{item("a", "What?")}, demos::aqua(), backend, PrethinkConfig{});
    const auto reqs = backend.requests();
    ASSERT_EQ(reqs.size(), 1u);
    EXPECT_EQ(reqs[0].num_samples, 16u);
    EXPECT_DOUBLE_EQ(reqs[0].temperature, 1.2);
    const auto aqua = demos::aqua();
    EXPECT_EQ(reqs[0].prompt_text(), render_few_shot(aqua.demos, "What?", aqua.style));
}

TEST(Prethink, FailureHandling) {
    ScriptedChatBackend flaky([](const CompletionRequest& r, std::size_t) -> std::optional<std::string> {
        if (prompt_target(r).find("bad") != std::string::npos) throw BackendError("boom");
        return "The answer is (A).";
    });
    const std::vector<TaskItem> mostly_ok{item("1", "ok1"), item("2", "bad"), item("3", "ok3")};
    const auto out = prethink_dataset(mostly_ok, demos::aqua(), flaky, PrethinkConfig{});
    EXPECT_EQ(out.failed_items, 1u);
    EXPECT_EQ(out.entries.size(), 2u);

    const std::vector<TaskItem> mostly_bad{item("1", "bad1"), item("2", "bad2"), item("3", "ok3")};
    EXPECT_THROW(prethink_dataset(mostly_bad, demos::aqua(), flaky, PrethinkConfig{}), BackendError);

    PrethinkConfig greedy_many;
    greedy_many.temperature = 0.0;
    EXPECT_THROW(prethink_dataset(mostly_ok, demos::aqua(), flaky, greedy_many), ConfigError);
    EXPECT_THROW(prethink_dataset(std::vector<TaskItem>{}, demos::aqua(), flaky, PrethinkConfig{}), PreconditionError);
}
