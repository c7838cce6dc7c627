#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "mot/error.hpp"
#include "mot/inference.hpp"
#include "mot/util/strings.hpp"

namespace mot {

/// Every knob of a run. Defaults follow the reference setup: n=16 paths at
/// T=1.2, tau=0.3, l=4 clusters, k=10 candidates.
struct RunConfig {
    struct Backend {
        std::string kind = "scripted";  // scripted | http
        std::string base_url = "https://api.openai.com/v1";
        std::string model_id = "gpt-3.5-turbo";
        std::string embedder_id = "text-embedding-ada-002";
        std::string cache_dir;
        std::size_t max_in_flight = 8;
        std::size_t max_tokens = default_max_tokens;
        std::string script;  // JSONL rule file for the scripted backend
        std::size_t embed_dim = 64;
    } backend;

    struct Prethink {
        std::size_t n = 16;
        double temperature = 1.2;
        double tau = 0.3;  // +inf keeps everything
        std::string filter = "entropy";  // entropy | max_p | gold | none
        double rho = 0.5;  // max_p threshold
    } prethink;

    struct Memory {
        std::size_t l = 4;
        std::size_t k = 10;
        std::uint64_t seed = 0;
    } memory;

    struct Inference {
        std::string mode = "mot";
        std::size_t sc_paths = 0;  // 0: single greedy path
        double sc_temperature = 0.7;
        std::size_t demo_count = 0;
        std::string recall = "llm";
        std::string demos = "aqua";  // builtin name or JSON file
    } inference;

    struct Paths {
        std::string tasks;
        std::string pool = "pool.jsonl";
        std::string dump = "prethink_dump.jsonl";
        std::string entries = "entries.jsonl";
        std::string reports = "reports";
        std::string golds;
        std::string trace;
    } paths;

    void validate() const {
        if (backend.kind != "scripted" && backend.kind != "http")
            throw ConfigError("backend.kind must be scripted or http, got '" + backend.kind + "'");
        if (backend.max_in_flight < 1) throw ConfigError("backend.max_in_flight must be >= 1");
        if (backend.max_tokens < 1) throw ConfigError("backend.max_tokens must be >= 1");
        if (backend.embed_dim < 1) throw ConfigError("backend.embed_dim must be >= 1");
        if (prethink.n < 1) throw ConfigError("prethink.n must be >= 1");
        if (!(prethink.temperature >= 0.0)) throw ConfigError("prethink.temperature must be >= 0");
        if (prethink.n > 1 && prethink.temperature == 0.0)
            throw ConfigError("prethink.n > 1 requires temperature > 0");
        if (!(prethink.tau >= 0.0)) throw ConfigError("prethink.tau must be >= 0");
        if (prethink.filter != "entropy" && prethink.filter != "max_p" && prethink.filter != "gold" &&
            prethink.filter != "none")
            throw ConfigError("prethink.filter must be entropy, max_p, gold or none");
        if (!(prethink.rho > 0.0 && prethink.rho <= 1.0)) throw ConfigError("prethink.rho must be in (0, 1]");
        if (memory.l < 1) throw ConfigError("memory.l must be >= 1");
        if (memory.k < 1) throw ConfigError("memory.k must be >= 1");
        (void)mode_kind_from_string(inference.mode);
        (void)recall_kind_from_string(inference.recall);
        if (inference.sc_paths > 1 && !(inference.sc_temperature > 0.0))
            throw ConfigError("inference.sc_temperature must be > 0 for sc_paths > 1");
    }

    InferenceMode inference_mode() const {
        InferenceMode m;
        m.kind = mode_kind_from_string(inference.mode);
        if (inference.sc_paths >= 1)
            m.self_consistency = SelfConsistency{inference.sc_paths, inference.sc_paths == 1 ? 0.0 : inference.sc_temperature};
        return m;
    }
};

namespace detail {

template <class T>
T ini_get(const boost::property_tree::ptree& tree, const std::string& key, T fallback) {
    const auto node = tree.get_optional<std::string>(key);
    if (!node) return fallback;
    const std::string v(strings::trim(*node));
    try {
        if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<T, double>) {
            const auto lower = strings::to_lower(v);
            if (lower == "inf" || lower == "infinity") return std::numeric_limits<double>::infinity();
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } else {
            if (v.empty() || v.front() == '-') throw std::invalid_argument(v);
            std::size_t used = 0;
            const auto u = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return static_cast<T>(u);
        }
    } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "' has invalid value '" + v + "'");
    }
}

inline const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "backend.kind", "backend.base_url", "backend.model_id", "backend.embedder_id", "backend.cache_dir",
        "backend.max_in_flight", "backend.max_tokens", "backend.script", "backend.embed_dim",
        "prethink.n", "prethink.temperature", "prethink.tau", "prethink.filter", "prethink.rho",
        "memory.l", "memory.k", "memory.seed",
        "inference.mode", "inference.sc_paths", "inference.sc_temperature", "inference.demo_count",
        "inference.recall", "inference.demos",
        "paths.tasks", "paths.pool", "paths.dump", "paths.entries", "paths.reports", "paths.golds", "paths.trace"};
    return keys;
}

inline void check_known_keys(const boost::property_tree::ptree& tree) {
    const auto& known = known_config_keys();
    for (const auto& [section, body] : tree) {
        for (const auto& [key, value] : body) {
            const auto full = section + "." + key;
            if (std::find(known.begin(), known.end(), full) == known.end())
                throw ConfigError("unknown config key '" + full + "'");
        }
    }
}

} // namespace detail

inline RunConfig config_from_tree(const boost::property_tree::ptree& tree) {
    detail::check_known_keys(tree);
    RunConfig c;
    using detail::ini_get;
    c.backend.kind = ini_get(tree, "backend.kind", c.backend.kind);
    c.backend.base_url = ini_get(tree, "backend.base_url", c.backend.base_url);
    c.backend.model_id = ini_get(tree, "backend.model_id", c.backend.model_id);
    c.backend.embedder_id = ini_get(tree, "backend.embedder_id", c.backend.embedder_id);
    c.backend.cache_dir = ini_get(tree, "backend.cache_dir", c.backend.cache_dir);
    c.backend.max_in_flight = ini_get(tree, "backend.max_in_flight", c.backend.max_in_flight);
    c.backend.max_tokens = ini_get(tree, "backend.max_tokens", c.backend.max_tokens);
    c.backend.script = ini_get(tree, "backend.script", c.backend.script);
    c.backend.embed_dim = ini_get(tree, "backend.embed_dim", c.backend.embed_dim);
    c.prethink.n = ini_get(tree, "prethink.n", c.prethink.n);
    c.prethink.temperature = ini_get(tree, "prethink.temperature", c.prethink.temperature);
    c.prethink.tau = ini_get(tree, "prethink.tau", c.prethink.tau);
    c.prethink.filter = ini_get(tree, "prethink.filter", c.prethink.filter);
    c.prethink.rho = ini_get(tree, "prethink.rho", c.prethink.rho);
    c.memory.l = ini_get(tree, "memory.l", c.memory.l);
    c.memory.k = ini_get(tree, "memory.k", c.memory.k);
    c.memory.seed = ini_get(tree, "memory.seed", c.memory.seed);
    c.inference.mode = ini_get(tree, "inference.mode", c.inference.mode);
    c.inference.sc_paths = ini_get(tree, "inference.sc_paths", c.inference.sc_paths);
    c.inference.sc_temperature = ini_get(tree, "inference.sc_temperature", c.inference.sc_temperature);
    c.inference.demo_count = ini_get(tree, "inference.demo_count", c.inference.demo_count);
    c.inference.recall = ini_get(tree, "inference.recall", c.inference.recall);
    c.inference.demos = ini_get(tree, "inference.demos", c.inference.demos);
    c.paths.tasks = ini_get(tree, "paths.tasks", c.paths.tasks);
    c.paths.pool = ini_get(tree, "paths.pool", c.paths.pool);
    c.paths.dump = ini_get(tree, "paths.dump", c.paths.dump);
    c.paths.entries = ini_get(tree, "paths.entries", c.paths.entries);
    c.paths.reports = ini_get(tree, "paths.reports", c.paths.reports);
    c.paths.golds = ini_get(tree, "paths.golds", c.paths.golds);
    c.paths.trace = ini_get(tree, "paths.trace", c.paths.trace);
    return c;
}

/// Applies "section.key=value" assignments on top of a tree.
inline void apply_overrides(boost::property_tree::ptree& tree, const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not key=value");
        const std::string key(strings::trim(a.substr(0, eq)));
        if (key.find('.') == std::string::npos) throw ConfigError("override key '" + key + "' needs a section");
        tree.put(key, std::string(strings::trim(a.substr(eq + 1))));
    }
}

/// Defaults, then the INI file (if any), then overrides.
inline RunConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides = {}) {
    boost::property_tree::ptree tree;
    if (file) {
        if (!std::filesystem::exists(*file)) throw ConfigError("config file not found: " + file->string());
        try {
            boost::property_tree::ini_parser::read_ini(file->string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }
    apply_overrides(tree, overrides);
    return config_from_tree(tree);
}

inline nlohmann::json to_json(const RunConfig& c) {
    const auto num = [](double v) { return std::isinf(v) ? nlohmann::json("inf") : nlohmann::json(v); };
    return {{"backend",
             {{"kind", c.backend.kind},
              {"base_url", c.backend.base_url},
              {"model_id", c.backend.model_id},
              {"embedder_id", c.backend.embedder_id},
              {"cache_dir", c.backend.cache_dir},
              {"max_in_flight", c.backend.max_in_flight},
              {"max_tokens", c.backend.max_tokens},
              {"script", c.backend.script},
              {"embed_dim", c.backend.embed_dim}}},
            {"prethink",
             {{"n", c.prethink.n},
              {"temperature", c.prethink.temperature},
              {"tau", num(c.prethink.tau)},
              {"filter", c.prethink.filter},
              {"rho", c.prethink.rho}}},
            {"memory", {{"l", c.memory.l}, {"k", c.memory.k}, {"seed", c.memory.seed}}},
            {"inference",
             {{"mode", c.inference.mode},
              {"sc_paths", c.inference.sc_paths},
              {"sc_temperature", c.inference.sc_temperature},
              {"demo_count", c.inference.demo_count},
              {"recall", c.inference.recall},
              {"demos", c.inference.demos}}},
            {"paths",
             {{"tasks", c.paths.tasks},
              {"pool", c.paths.pool},
              {"dump", c.paths.dump},
              {"entries", c.paths.entries},
              {"reports", c.paths.reports},
              {"golds", c.paths.golds},
              {"trace", c.paths.trace}}}};
}

} // namespace mot
