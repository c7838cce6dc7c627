#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mot/error.hpp"
#include "mot/util/strings.hpp"

namespace mot {

enum class FormatKind { multi_choice, classification, abstractive };

inline std::string_view to_string(FormatKind k) {
    switch (k) {
        case FormatKind::multi_choice: return "multi_choice";
        case FormatKind::classification: return "classification";
        case FormatKind::abstractive: return "abstractive";
    }
    return "abstractive";
}

inline FormatKind format_kind_from_string(std::string_view s) {
    if (s == "multi_choice") return FormatKind::multi_choice;
    if (s == "classification") return FormatKind::classification;
    if (s == "abstractive") return FormatKind::abstractive;
    throw ConfigError("unknown task format '" + std::string(s) + "'");
}

/// Answer space of a task: letters for multi-choice, a closed label list for
/// classification, free text for abstractive.
struct TaskFormat {
    FormatKind kind = FormatKind::abstractive;
    std::vector<std::string> label_set;

    static TaskFormat multi_choice(std::vector<std::string> letters) {
        TaskFormat f{FormatKind::multi_choice, std::move(letters)};
        f.validate();
        return f;
    }
    static TaskFormat multi_choice_letters(char last) {
        std::vector<std::string> letters;
        for (char c = 'A'; c <= last; ++c) letters.emplace_back(1, c);
        return multi_choice(std::move(letters));
    }
    static TaskFormat classification(std::vector<std::string> labels) {
        TaskFormat f{FormatKind::classification, std::move(labels)};
        f.validate();
        return f;
    }
    static TaskFormat abstractive() { return TaskFormat{FormatKind::abstractive, {}}; }

    void validate() const {
        switch (kind) {
            case FormatKind::multi_choice:
                if (label_set.empty()) throw ConfigError("multi_choice format needs letters");
                for (const auto& l : label_set)
                    if (l.size() != 1 || l[0] < 'A' || l[0] > 'Z')
                        throw ConfigError("multi_choice label '" + l + "' is not an uppercase letter");
                break;
            case FormatKind::classification:
                if (label_set.empty()) throw ConfigError("classification format needs labels");
                for (const auto& l : label_set)
                    if (strings::trim(l).empty()) throw ConfigError("classification label is blank");
                break;
            case FormatKind::abstractive:
                if (!label_set.empty()) throw ConfigError("abstractive format takes no labels");
                break;
        }
    }

    bool is_label_format() const noexcept { return kind != FormatKind::abstractive; }

    bool operator==(const TaskFormat&) const = default;
};

enum class Split { unlabeled, test };

inline std::string_view to_string(Split s) { return s == Split::unlabeled ? "unlabeled" : "test"; }

struct Choice {
    std::string letter;
    std::string text;

    bool operator==(const Choice&) const = default;
};

/// One question. `question_text` is used verbatim in prompts; reading
/// passages and rendered answer choices belong inside it.
struct TaskItem {
    std::string question_id;
    std::string question_text;
    std::vector<Choice> choices;
    std::vector<std::string> gold_answers;
    TaskFormat format;
    Split split = Split::test;

    bool operator==(const TaskItem&) const = default;
};

} // namespace mot
