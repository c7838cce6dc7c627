#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mot/task.hpp"
#include "mot/util/strings.hpp"

namespace mot {

inline const std::vector<std::string>& default_triggers() {
    static const std::vector<std::string> t{"The answer is", "Therefore, the answer is", "the answer is"};
    return t;
}

/// Second-pass extraction trigger appended after a zero-shot rationale.
inline std::string zero_shot_answer_trigger() { return "Therefore, the answer is"; }

enum class ParseStatus { parsed, unparseable };

struct ParsedAnswer {
    ParseStatus status = ParseStatus::unparseable;
    std::string value;
    std::string trigger_used;

    bool ok() const noexcept { return status == ParseStatus::parsed; }

    static ParsedAnswer unparseable(std::string trigger = {}) {
        return {ParseStatus::unparseable, {}, std::move(trigger)};
    }

    bool operator==(const ParsedAnswer&) const = default;
};

namespace detail {

inline bool boundary_before(std::string_view s, std::size_t pos) {
    return pos == 0 || !strings::is_word_char(s[pos - 1]);
}

inline bool boundary_after(std::string_view s, std::size_t end) {
    return end >= s.size() || !strings::is_word_char(s[end]);
}

inline std::string strip_token_punct(std::string_view tok) {
    constexpr std::string_view punct = "()[]{}.,:;!?\"'*";
    while (!tok.empty() && punct.find(tok.front()) != std::string_view::npos) tok.remove_prefix(1);
    while (!tok.empty() && punct.find(tok.back()) != std::string_view::npos) tok.remove_suffix(1);
    return std::string(tok);
}

inline std::string extract_choice_letter(std::string_view tail, const TaskFormat& format) {
    for (const auto& tok : strings::split_whitespace(tail)) {
        const auto core = strip_token_punct(tok);
        if (core.size() != 1) continue;
        const std::string up(1, static_cast<char>(std::toupper(static_cast<unsigned char>(core[0]))));
        if (std::find(format.label_set.begin(), format.label_set.end(), up) != format.label_set.end()) return up;
    }
    return {};
}

inline std::string extract_label(std::string_view tail, const TaskFormat& format) {
    const std::string hay = strings::to_lower(tail);
    std::size_t best_pos = std::string::npos;
    std::size_t best_len = 0;
    std::string best;
    for (const auto& label : format.label_set) {
        const std::string needle = strings::to_lower(label);
        for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
            if (!boundary_before(hay, pos) || !boundary_after(hay, pos + needle.size())) continue;
            if (pos < best_pos || (pos == best_pos && needle.size() > best_len)) {
                best_pos = pos;
                best_len = needle.size();
                best = label;
            }
            break;
        }
    }
    return best;
}

inline std::string extract_free_text(std::string_view tail) {
    const auto nl = tail.find('\n');
    if (nl != std::string_view::npos) tail = tail.substr(0, nl);
    constexpr std::string_view strip = " \t\r\"'.`";
    while (!tail.empty() && strip.find(tail.front()) != std::string_view::npos) tail.remove_prefix(1);
    while (!tail.empty() && strip.find(tail.back()) != std::string_view::npos) tail.remove_suffix(1);
    return std::string(tail);
}

} // namespace detail

/// Extracts the final answer: the text after the last occurrence of the
/// first trigger (in list order) present in `raw`, canonicalized for `format`.
inline ParsedAnswer parse_answer(std::string_view raw, const TaskFormat& format,
                                 std::span<const std::string> triggers = default_triggers()) {
    if (triggers.empty()) throw PreconditionError("parse_answer: no triggers");
    for (const auto& trig : triggers) {
        const auto pos = raw.rfind(trig);
        if (pos == std::string_view::npos) continue;
        const auto tail = raw.substr(pos + trig.size());
        std::string value;
        switch (format.kind) {
            case FormatKind::multi_choice: value = detail::extract_choice_letter(tail, format); break;
            case FormatKind::classification: value = detail::extract_label(tail, format); break;
            case FormatKind::abstractive: value = detail::extract_free_text(tail); break;
        }
        if (value.empty()) return ParsedAnswer::unparseable(trig);
        return {ParseStatus::parsed, std::move(value), trig};
    }
    return ParsedAnswer::unparseable();
}

/// Lowercase, drop punctuation (keeping hyphens inside words), drop the
/// articles a/an/the, collapse whitespace.
inline std::string normalize_text(std::string_view s) {
    std::string lowered = strings::to_lower(s);
    std::string cleaned;
    cleaned.reserve(lowered.size());
    for (std::size_t i = 0; i < lowered.size(); ++i) {
        const unsigned char c = static_cast<unsigned char>(lowered[i]);
        if (std::ispunct(c) != 0) {
            const bool inner_hyphen = c == '-' && i > 0 && i + 1 < lowered.size() &&
                                      std::isalnum(static_cast<unsigned char>(lowered[i - 1])) != 0 &&
                                      std::isalnum(static_cast<unsigned char>(lowered[i + 1])) != 0;
            if (!inner_hyphen) continue;
        }
        cleaned.push_back(static_cast<char>(c));
    }
    std::string out;
    for (const auto& tok : strings::split_whitespace(cleaned)) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

/// Bag-of-tokens F1 against the best-matching gold.
inline double token_f1(std::string_view prediction, std::span<const std::string> golds) {
    if (golds.empty()) throw PreconditionError("token_f1: no gold answers");
    const auto pred = strings::split_whitespace(normalize_text(prediction));
    double best = 0.0;
    for (const auto& g : golds) {
        const auto gold = strings::split_whitespace(normalize_text(g));
        double f1 = 0.0;
        if (pred.empty() && gold.empty()) {
            f1 = 1.0;
        } else if (!pred.empty() && !gold.empty()) {
            std::map<std::string, int> bag;
            for (const auto& t : gold) ++bag[t];
            std::size_t common = 0;
            for (const auto& t : pred) {
                auto it = bag.find(t);
                if (it != bag.end() && it->second > 0) {
                    --it->second;
                    ++common;
                }
            }
            if (common > 0) {
                const double p = static_cast<double>(common) / static_cast<double>(pred.size());
                const double r = static_cast<double>(common) / static_cast<double>(gold.size());
                f1 = 2.0 * p * r / (p + r);
            }
        }
        best = std::max(best, f1);
    }
    return best;
}

inline double token_f1(std::string_view prediction, std::initializer_list<std::string> golds) {
    const std::vector<std::string> g(golds);
    return token_f1(prediction, std::span<const std::string>(g));
}

/// Canonical spelling of a gold answer for `format`; empty if it has none.
inline std::string canonical_gold(std::string_view gold, const TaskFormat& format) {
    const auto g = strings::trim(gold);
    switch (format.kind) {
        case FormatKind::multi_choice: return detail::extract_choice_letter(g, format);
        case FormatKind::classification:
            for (const auto& l : format.label_set)
                if (strings::to_lower(l) == strings::to_lower(g)) return l;
            return {};
        case FormatKind::abstractive: return std::string(g);
    }
    return {};
}

/// 1 iff parsed and equal to the gold's canonical form; abstractive answers
/// compare after normalize_text.
inline int exact_match(const ParsedAnswer& prediction, std::string_view gold, const TaskFormat& format) {
    if (!prediction.ok()) return 0;
    if (format.kind == FormatKind::abstractive)
        return normalize_text(prediction.value) == normalize_text(gold) ? 1 : 0;
    const auto g = canonical_gold(gold, format);
    return !g.empty() && g == prediction.value ? 1 : 0;
}

} // namespace mot
