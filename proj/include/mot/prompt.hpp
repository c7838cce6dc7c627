#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mot/task.hpp"

namespace mot {

/// Framing around each question/answer block. NLI-style sets put the
/// "Premise:" framing inside the question and use no question prefix.
struct PromptStyle {
    std::string question_prefix = "Q: ";
    std::string answer_prefix = "A:";

    bool operator==(const PromptStyle&) const = default;
};

inline constexpr std::string_view default_answer_trigger = "The answer is";
inline constexpr std::string_view step_by_step = "Let's think step by step.";
inline constexpr std::string_view demo_separator = "\n\n";

/// A worked example: "[input] [rationale] The answer is [answer]".
struct Demonstration {
    std::string question_text;
    std::string rationale_text;  // may be empty
    std::string answer_text;     // as displayed, e.g. "(A)" or "21 yards"
    std::string answer_trigger = std::string(default_answer_trigger);

    bool operator==(const Demonstration&) const = default;
};

inline std::string render_demonstration(const Demonstration& d, const PromptStyle& style) {
    std::string out = style.question_prefix + d.question_text + "\n" + style.answer_prefix + " ";
    if (!d.rationale_text.empty()) out += d.rationale_text + " ";
    out += d.answer_trigger + " " + d.answer_text;
    if (out.back() != '.') out.push_back('.');
    return out;
}

inline std::string render_question(std::string_view question, const PromptStyle& style) {
    return style.question_prefix + std::string(question) + "\n" + style.answer_prefix;
}

/// Demonstrations in order, blank-line separated, followed by the open question.
inline std::string render_few_shot(const std::vector<Demonstration>& demos, std::string_view question,
                                   const PromptStyle& style) {
    std::string out;
    for (const auto& d : demos) {
        out += render_demonstration(d, style);
        out += demo_separator;
    }
    out += render_question(question, style);
    return out;
}

inline std::vector<Demonstration> strip_rationales(std::vector<Demonstration> demos) {
    for (auto& d : demos) {
        d.rationale_text.clear();
        d.answer_trigger = std::string(default_answer_trigger);
    }
    return demos;
}

/// Display form of a canonical answer inside a demonstration.
inline std::string display_answer(const std::string& canonical, const TaskFormat& format) {
    if (format.kind == FormatKind::multi_choice) return "(" + canonical + ")";
    return canonical;
}

/// A named static demonstration set for Few-Shot(-CoT) prompting.
struct DemoSet {
    std::string name;
    PromptStyle style;
    TaskFormat format;
    std::vector<Demonstration> demos;
};

} // namespace mot
