#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mot/backend/types.hpp"
#include "mot/prethink.hpp"
#include "mot/util/digest.hpp"
#include "mot/util/random.hpp"

namespace mot {

inline constexpr int pool_format_version = 1;

struct PoolMeta {
    std::string embedder_id;
    std::optional<double> tau;  // nullopt: no entropy threshold applied
    std::string filter = "entropy";
    std::uint64_t seed = 0;
    std::string created_at;
    std::string source_dataset;

    bool operator==(const PoolMeta&) const = default;
};

/// Clustered memory. Immutable once built; every entry's cluster_id indexes
/// its nearest centroid and no cluster is empty.
struct MemoryPool {
    std::vector<MemoryEntry> entries;
    std::vector<EmbeddingVector> centroids;
    std::size_t l = 0;
    PoolMeta meta;

    std::vector<std::size_t> members(std::size_t cluster) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].cluster_id == cluster) out.push_back(i);
        return out;
    }

    bool operator==(const MemoryPool&) const = default;
};

/// Embeds question texts (not rationales) into each entry.
inline void embed_entries(std::vector<MemoryEntry>& entries, EmbeddingBackend& embedder, std::size_t batch = 64) {
    for (std::size_t start = 0; start < entries.size(); start += batch) {
        const std::size_t end = std::min(entries.size(), start + batch);
        std::vector<std::string> texts;
        for (std::size_t i = start; i < end; ++i) texts.push_back(entries[i].question_text);
        auto vecs = embedder.embed(texts);
        for (std::size_t i = start; i < end; ++i) entries[i].embedding = std::move(vecs[i - start]);
    }
}

namespace detail {

inline std::size_t nearest_centroid(const EmbeddingVector& x, const std::vector<EmbeddingVector>& centroids) {
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double s = cosine(x, centroids[c]);
        if (s > best_sim) {
            best_sim = s;
            best = c;
        }
    }
    return best;
}

/// k-means++ seeding with cosine distance 1 - cos.
inline std::vector<EmbeddingVector> seed_centroids(const std::vector<MemoryEntry>& entries, std::size_t l,
                                                   SplitMix64& rng) {
    std::vector<EmbeddingVector> centroids;
    centroids.push_back(entries[rng.uniform_index(entries.size())].embedding);
    std::vector<double> dist(entries.size());
    while (centroids.size() < l) {
        double total = 0.0;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            double best = -1.0;
            for (const auto& c : centroids) best = std::max(best, cosine(entries[i].embedding, c));
            const double d = std::max(0.0, 1.0 - best);
            dist[i] = d * d;
            total += dist[i];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.uniform_index(entries.size());
        } else {
            double r = rng.uniform01() * total;
            pick = entries.size() - 1;
            for (std::size_t i = 0; i < entries.size(); ++i) {
                r -= dist[i];
                if (r < 0.0 && dist[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(entries[pick].embedding);
    }
    return centroids;
}

/// Gives every empty cluster the worst-fitting point of a cluster that can
/// spare one, and moves that cluster's centroid onto the point. Returns
/// whether anything changed.
inline bool reseed_empty(const std::vector<MemoryEntry>& entries, std::vector<std::size_t>& assign,
                         std::vector<EmbeddingVector>& centroids) {
    const std::size_t l = centroids.size();
    std::vector<std::size_t> sizes(l, 0);
    for (auto a : assign) ++sizes[a];
    bool changed = false;
    for (std::size_t c = 0; c < l; ++c) {
        if (sizes[c] != 0) continue;
        std::size_t far = entries.size();
        double far_sim = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (sizes[assign[i]] < 2) continue;
            const double s = cosine(entries[i].embedding, centroids[assign[i]]);
            if (s < far_sim) {
                far_sim = s;
                far = i;
            }
        }
        if (far == entries.size()) break;
        --sizes[assign[far]];
        assign[far] = c;
        sizes[c] = 1;
        centroids[c] = entries[far].embedding;
        changed = true;
    }
    return changed;
}

inline bool has_empty(const std::vector<std::size_t>& assign, std::size_t l) {
    std::vector<bool> seen(l, false);
    for (auto a : assign) seen[a] = true;
    return std::find(seen.begin(), seen.end(), false) != seen.end();
}

} // namespace detail

inline constexpr std::size_t kmeans_max_iterations = 100;
inline constexpr double kmeans_tolerance = 1e-6;

/// Seeded spherical k-means over question embeddings.
inline MemoryPool build_pool(std::vector<MemoryEntry> entries, std::size_t l, std::uint64_t seed,
                             PoolMeta meta = {}) {
    if (l < 1) throw ConfigError("build_pool: l must be >= 1");
    if (entries.size() < l)
        throw ConfigError("build_pool: " + std::to_string(entries.size()) + " entries cannot fill " +
                          std::to_string(l) + " clusters");
    const std::size_t dim = entries.front().embedding.dim();
    for (const auto& e : entries)
        if (e.embedding.empty() || e.embedding.dim() != dim)
            throw ConfigError("build_pool: entry '" + e.question_id + "' has no or mismatched embedding");

    SplitMix64 rng(seed);
    auto centroids = detail::seed_centroids(entries, l, rng);
    std::vector<std::size_t> assign(entries.size(), 0);

    for (std::size_t iter = 0; iter < kmeans_max_iterations; ++iter) {
        for (std::size_t i = 0; i < entries.size(); ++i) assign[i] = detail::nearest_centroid(entries[i].embedding, centroids);
        const bool repaired = detail::reseed_empty(entries, assign, centroids);

        double movement = 0.0;
        for (std::size_t c = 0; c < l; ++c) {
            std::vector<double> sum(dim, 0.0);
            for (std::size_t i = 0; i < entries.size(); ++i) {
                if (assign[i] != c) continue;
                const auto& v = entries[i].embedding.values();
                for (std::size_t d = 0; d < dim; ++d) sum[d] += v[d];
            }
            double sq = 0.0;
            for (double s : sum) sq += s * s;
            if (!(std::sqrt(sq) > 1e-12)) continue;
            auto next = EmbeddingVector::normalized(std::move(sum));
            double diff = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double delta = next.values()[d] - centroids[c].values()[d];
                diff += delta * delta;
            }
            movement = std::max(movement, std::sqrt(diff));
            centroids[c] = std::move(next);
        }
        if (!repaired && movement < kmeans_tolerance) break;
    }

    // Final assignment against the final centroids, then repair whatever that
    // empties. Only exact ties (duplicate points) can leave a cluster empty
    // after a reseed, and for those the forced assignment below is still a
    // nearest-centroid assignment.
    for (std::size_t i = 0; i < entries.size(); ++i) assign[i] = detail::nearest_centroid(entries[i].embedding, centroids);
    for (int round = 0; round < 3 && detail::has_empty(assign, l); ++round) {
        detail::reseed_empty(entries, assign, centroids);
        std::vector<std::size_t> again(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) again[i] = detail::nearest_centroid(entries[i].embedding, centroids);
        if (detail::has_empty(again, l)) break;
        assign = std::move(again);
    }
    if (detail::has_empty(assign, l)) detail::reseed_empty(entries, assign, centroids);

    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].cluster_id = assign[i];
    meta.seed = seed;
    return MemoryPool{std::move(entries), std::move(centroids), l, std::move(meta)};
}

struct ScoredEntry {
    std::size_t entry_index = 0;  // into MemoryPool::entries
    double score = 0.0;

    bool operator==(const ScoredEntry&) const = default;
};

struct CandidateSet {
    std::size_t cluster_id = 0;
    std::vector<ScoredEntry> candidates;  // score non-increasing, ties by question_id

    bool operator==(const CandidateSet&) const = default;
};

/// Per-cluster top-k by cosine similarity to the query.
inline std::vector<CandidateSet> candidates_for(const MemoryPool& pool, const EmbeddingVector& query, std::size_t k) {
    if (k < 1) throw PreconditionError("candidates_for: k must be >= 1");
    std::vector<CandidateSet> out(pool.l);
    for (std::size_t c = 0; c < pool.l; ++c) out[c].cluster_id = c;
    for (std::size_t i = 0; i < pool.entries.size(); ++i) {
        const auto& e = pool.entries[i];
        if (!e.cluster_id || *e.cluster_id >= pool.l) throw InternalError("pool entry without a valid cluster");
        out[*e.cluster_id].candidates.push_back({i, cosine(query, e.embedding)});
    }
    for (auto& set : out) {
        auto& v = set.candidates;
        const auto by_rank = [&](const ScoredEntry& a, const ScoredEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            return pool.entries[a.entry_index].question_id < pool.entries[b.entry_index].question_id;
        };
        if (v.size() > k) {
            std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), by_rank);
            v.resize(k);
        } else {
            std::sort(v.begin(), v.end(), by_rank);
        }
    }
    return out;
}

namespace detail {

inline nlohmann::json pool_header(const MemoryPool& pool, const std::string& checksum) {
    nlohmann::json centroids = nlohmann::json::array();
    for (const auto& c : pool.centroids) centroids.push_back(c.values());
    return {{"format_version", pool_format_version},
            {"l", pool.l},
            {"tau", pool.meta.tau ? nlohmann::json(*pool.meta.tau) : nlohmann::json(nullptr)},
            {"filter", pool.meta.filter},
            {"embedder_id", pool.meta.embedder_id},
            {"seed", pool.meta.seed},
            {"created_at", pool.meta.created_at},
            {"source_dataset", pool.meta.source_dataset},
            {"count", pool.entries.size()},
            {"checksum", checksum},
            {"centroids", std::move(centroids)}};
}

} // namespace detail

/// Line 1: JSON header; then one JSON object per entry. The checksum is the
/// SHA-256 of the entry lines (each with its trailing newline).
inline void save_pool(const MemoryPool& pool, const std::filesystem::path& path) {
    std::string body;
    for (const auto& e : pool.entries) {
        body += to_json(e).dump();
        body += '\n';
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write pool file " + path.string());
    out << detail::pool_header(pool, sha256_hex(body)).dump() << '\n' << body;
    if (!out) throw IoError("short write on pool file " + path.string());
}

inline MemoryPool load_pool(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open pool file " + path.string());
    std::string header_line;
    if (!std::getline(in, header_line)) throw CorruptionError("pool file is empty: " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception&) {
        throw CorruptionError("pool header is not valid JSON: " + path.string());
    }
    if (!header.is_object() || !header.contains("format_version") || !header["format_version"].is_number_integer())
        throw FormatError("pool file has no format_version header: " + path.string());
    if (header["format_version"].get<int>() != pool_format_version)
        throw FormatError("pool format version " + header["format_version"].dump() + " is not supported (expected " +
                          std::to_string(pool_format_version) + ")");

    std::stringstream rest;
    rest << in.rdbuf();
    const std::string body = rest.str();

    MemoryPool pool;
    try {
        pool.l = header.at("l").get<std::size_t>();
        const auto count = header.at("count").get<std::size_t>();
        if (sha256_hex(body) != header.at("checksum").get<std::string>())
            throw CorruptionError("pool checksum mismatch: " + path.string());
        if (!header.at("tau").is_null()) pool.meta.tau = header["tau"].get<double>();
        pool.meta.filter = header.value("filter", std::string{"entropy"});
        pool.meta.embedder_id = header.at("embedder_id").get<std::string>();
        pool.meta.seed = header.at("seed").get<std::uint64_t>();
        pool.meta.created_at = header.value("created_at", std::string{});
        pool.meta.source_dataset = header.value("source_dataset", std::string{});
        for (const auto& c : header.at("centroids"))
            pool.centroids.push_back(EmbeddingVector::from_unit(c.get<std::vector<double>>()));

        std::istringstream lines(body);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            pool.entries.push_back(memory_entry_from_json(nlohmann::json::parse(line)));
        }
        if (pool.entries.size() != count)
            throw CorruptionError("pool holds " + std::to_string(pool.entries.size()) + " entries, header says " +
                                  std::to_string(count));
        if (pool.centroids.size() != pool.l) throw CorruptionError("pool centroid count does not match l");
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("pool file is malformed: ") + e.what());
    }
    return pool;
}

/// Seeded uniform subsample (entry order preserved), re-clustered.
inline MemoryPool subsample_pool(const MemoryPool& pool, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw PreconditionError("subsample_pool: fraction must be in (0, 1]");
    const std::size_t n = pool.entries.size();
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (keep < pool.l)
        throw ConfigError("subsample of " + std::to_string(keep) + " entries cannot fill " + std::to_string(pool.l) +
                          " clusters");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    SplitMix64 rng(mix_seed(seed, 0x5ab5a3b1eULL));
    for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    std::vector<MemoryEntry> chosen;
    chosen.reserve(keep);
    for (auto i : idx) {
        chosen.push_back(pool.entries[i]);
        chosen.back().cluster_id.reset();
    }
    return build_pool(std::move(chosen), pool.l, seed, pool.meta);
}

} // namespace mot
