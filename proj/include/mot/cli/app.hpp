#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mot/cli/commands.hpp"

namespace mot::cli {

namespace detail {

inline std::vector<double> parse_number_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& part : strings::split(s, ',')) {
        const std::string t(strings::trim(part));
        if (t.empty()) continue;
        const auto lower = strings::to_lower(t);
        if (lower == "inf" || lower == "infinity") {
            out.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        try {
            std::size_t used = 0;
            out.push_back(std::stod(t, &used));
            if (used != t.size()) throw std::invalid_argument(t);
        } catch (const std::logic_error&) {
            throw ConfigError("'" + t + "' is not a number");
        }
    }
    return out;
}

inline std::vector<std::string> parse_word_list(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& part : strings::split(s, ','))
        if (auto t = strings::trim(part); !t.empty()) out.emplace_back(t);
    return out;
}

} // namespace detail

/// Full command line. Returns the process exit code: 0 ok, 1 config or
/// usage, 2 I/O, 3 backend.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Memory-of-Thought pipeline: prethink, build-memory, answer, eval, sweep"};
    app.require_subcommand(1);

    std::optional<std::string> config_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> trace;
    std::optional<std::string> backend;
    std::optional<std::size_t> max_in_flight;
    std::vector<std::string> sets;
    std::string log_level = "warn";
    app.add_option("--config", config_file, "INI config file");
    app.add_option("--seed", seed, "Seed for path selection, clustering and subsampling");
    app.add_option("--trace", trace, "Write the answer/recall transcript to this file");
    app.add_option("--backend", backend, "Backend kind")->check(CLI::IsMember({"scripted", "http"}));
    app.add_option("--max-in-flight", max_in_flight, "Bound on concurrent backend requests");
    app.add_option("--set", sets, "Override a config key, e.g. --set prethink.tau=0.6");
    app.add_option("--log-level", log_level, "spdlog level")->check(
        CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    auto* prethink = app.add_subcommand("prethink", "Sample reasoning paths over the unlabeled split");
    auto* build = app.add_subcommand("build-memory", "Filter, embed and cluster entries into a pool");

    auto* answer = app.add_subcommand("answer", "Answer one question");
    AnswerOptions answer_opts;
    std::string labels;
    answer->add_option("question", answer_opts.question, "Question text")->required();
    std::optional<std::string> mode;
    answer->add_option("--mode", mode, "Inference mode");
    answer->add_option("--format", answer_opts.format, "multi_choice, classification or abstractive");
    answer->add_option("--labels", labels, "Comma-separated label set");

    auto* eval = app.add_subcommand("eval", "Evaluate a mode on the test split");
    auto* sweep = app.add_subcommand("sweep", "Threshold, memory-size or mode sweeps");
    SweepOptions sweep_opts;
    std::string taus, fractions, modes;
    sweep->add_option("--kind", sweep_opts.kind, "threshold, memory or modes")
        ->check(CLI::IsMember({"threshold", "memory", "modes"}));
    sweep->add_option("--taus", taus, "Comma-separated thresholds; 'inf' allowed");
    sweep->add_option("--fractions", fractions, "Comma-separated pool fractions in (0, 1]");
    sweep->add_option("--modes", modes, "Comma-separated inference modes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(log_level));
        std::vector<std::string> overrides;
        if (backend) overrides.push_back("backend.kind=" + *backend);
        if (max_in_flight) overrides.push_back("backend.max_in_flight=" + std::to_string(*max_in_flight));
        if (seed) overrides.push_back("memory.seed=" + std::to_string(*seed));
        if (trace) overrides.push_back("paths.trace=" + *trace);
        if (mode) overrides.push_back("inference.mode=" + *mode);
        // Dedicated flags are applied after --set and take precedence.
        overrides.insert(overrides.begin(), sets.begin(), sets.end());
        auto config = load_config(config_file ? std::optional<std::filesystem::path>(*config_file) : std::nullopt,
                                  overrides);
        config.validate();
        if (!labels.empty()) answer_opts.labels = detail::parse_word_list(labels);
        if (!taus.empty()) sweep_opts.taus = detail::parse_number_list(taus);
        if (!fractions.empty()) sweep_opts.fractions = detail::parse_number_list(fractions);
        if (!modes.empty()) sweep_opts.modes = detail::parse_word_list(modes);

        Runtime rt(config);
        if (*prethink) cmd_prethink(config, rt, out);
        else if (*build) cmd_build_memory(config, rt, out);
        else if (*answer) cmd_answer(config, rt, answer_opts, out);
        else if (*eval) cmd_eval(config, rt, out);
        else if (*sweep) cmd_sweep(config, rt, sweep_opts, out);
        return 0;
    } catch (const Error& e) {
        err << "error[" << e.kind() << "]: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error[io]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << "\n";
        return 1;
    }
}

} // namespace mot::cli
