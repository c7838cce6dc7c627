#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mot/error.hpp"
#include "mot/prompt.hpp"

namespace mot::demos {

// Manual Few-Shot-CoT demonstrations for the reference task families.

inline DemoSet aqua() {
    return {"aqua", {}, TaskFormat::multi_choice_letters('E'), {
        {"John found that the average of 15 numbers is 40. If 10 is added to each number then the mean of the numbers is? Answer Choices: (A) 50 (B) 45 (C) 65 (D) 78 (E) 64",
         "If 10 is added to each number, then the mean of the numbers also increases by 10. So the new mean would be 50.",
         "(A)"},
        {"If a / b = 3/4 and 8a + 5b = 22,then find the value of a. Answer Choices: (A) 1/2 (B) 3/2 (C) 5/2 (D) 4/2 (E) 7/2",
         "If a / b = 3/4, then b = 4a / 3. So 8a + 5(4a / 3) = 22. This simplifies to 8a + 20a / 3 = 22, which means 44a / 3 = 22. So a is equal to 3/2.",
         "(B)"},
        {"A person is traveling at 20 km/hr and reached his destiny in 2.5 hr then find the distance? Answer Choices: (A) 53 km (B) 55 km (C) 52 km (D) 60 km (E) 50 km",
         "The distance that the person traveled would have been 20 km/hr * 2.5 hrs = 50 km.",
         "(E)"},
        {"How many keystrokes are needed to type the numbers from 1 to 500? Answer Choices: (A) 1156 (B) 1392 (C) 1480 (D) 1562 (E) 1788",
         "There are 9 one-digit numbers from 1 to 9. There are 90 two-digit numbers from 10 to 99. There are 401 three-digit numbers from 100 to 500. 9 + 90(2) + 401(3) = 1392.",
         "(B)"},
    }};
}

inline DemoSet drop() {
    const std::string so = "So the answer is";
    return {"drop", {}, TaskFormat::abstractive(), {
        {"The Seahawks played the San Francisco 49ers. In the first quarter, the Hawks RB Julius Jones got a 27-yard TD run, along with DT Craig Terrill returning a fumble 9 yards for a touchdown. In the third quarter, the 49ers almost rallied as RB H. J. Torres made a 12-yard TD pass to Lucas Nelly, along with Mare kicking a 32-yard field goal. In the final quarter, Julius Jones got another 11-yard TD. How many yards do the shortest touchdown run and the longest touchdown pass combine for?",
         "All the touchdown runs are: a 27-yard touchdown run, a 9-yard touchdown run, a 11-yard touchdown run. The smallest number among 27, 9, 11 is 9. So the shortest touchdown run was 9 yards. All the touchdown passes are: a 12-yard touchdown pass. So the longest touchdown pass was 12 yards. So the shortest touchdown run and the longest touchdown pass combine for 9 + 12 = 21 yards.",
         "21 yards", so},
        {"In the county, the population was spread out with 23.50% under the age of 18, 8.70% from 18 to 24, 29.70% from 25 to 44, 24.70% from 45 to 64, and 13.30% who were 65 years of age or older. How many more percent are under the age of 18 compared to the 18 to 24 group?",
         "According to the passage, 23.5% are under the age of 18, and 8.7% are from ages 18 to 24. 23.5% - 8.7% = 14.8%.",
         "14.8", so},
        {"Since the 1970s, U.S. governments have negotiated managed-trade agreements, such as the North American Free Trade Agreement in the 1990s, the Dominican Republic-Central America Free Trade Agreement in 2006, and a number of bilateral agreements. In Europe, six countries formed the European Coal and Steel Community in 1951 which became the European Economic Community in 1958. Two core objectives of the EEC were the development of a common market, subsequently renamed the single market, and establishing a customs union between its member states. How many years did the European Coal and Steel Community exist?",
         "According to the passage, the European Coal and Steel Community was established in 1951 and became the EEC in 1958. 1958 - 1951 = 7.",
         "7", so},
        {"The Vikings flew to Bank of America Stadium to face the Carolina Panthers. After a scoreless first quarter, Carolina got on the board with quarterback Matt Moore finding fullback Brad Hoover on a 1-yard TD pass. After yet another scoreless quarter, Carolina sealed the game as Matt Moore completed a 42-yard touchdown pass to wide receiver Steve Smith. How many scoreless quarters were there?",
         "The first and third quarters were the scoreless quarters. So there are 2 scoreless quarters.",
         "2", so},
    }};
}

namespace detail {
inline std::string nli_question(std::string_view premise, std::string_view hypothesis) {
    return "Premise:\n\"" + std::string(premise) + "\"\nBased on this premise, can we conclude the hypothesis \"" +
           std::string(hypothesis) + "\" is true?\nOPTIONS:\n- yes\n- no\n- it is not possible to tell";
}
} // namespace detail

inline DemoSet anli() {
    using detail::nli_question;
    return {"anli", PromptStyle{"", "A:"},
            TaskFormat::classification({"yes", "no", "it is not possible to tell"}), {
        {nli_question("Conceptually cream skimming has two basic dimensions - product and geography.",
                      "Product and geography are what make cream skimming work."),
         "Based on \"cream skimming has two basic dimensions\" we can't infer that these two dimensions are what make cream skimming work.",
         "it is not possible to tell"},
        {nli_question("One of our member will carry out your instructions minutely.",
                      "A member of my team will execute your orders with immense precision."),
         "\"one of\" means the same as \"a member of\", \"carry out\" means the same as \"execute\", and \"minutely\" means the same as \"immense precision\".",
         "yes"},
        {nli_question("Fun for adults and children.", "Fun for only children."),
         "\"adults and children\" contradicts \"only children\".",
         "no"},
        {nli_question("He turned and smiled at Vrenna.",
                      "He smiled at Vrenna who was walking slowly behind him with her mother."),
         "the premise does not say anything about \"Vrenna was walking\".",
         "it is not possible to tell"},
    }};
}

inline DemoSet obqa() {
    return {"obqa", {}, TaskFormat::multi_choice_letters('D'), {
        {"Poison causes harm to which of the following? (A) a Tree (B) a robot (C) a house (D) a car",
         "Poison will harm living things, only a tree is a living thing.", "(A)"},
        {"As you look deeper into a Marbel you can see (A) the future (B) minut defects (C) colors (D) the other side",
         "Marbel is not transparent, so you can not see the other side. Marbel does not necessarily have multiple colors. You will see minut defects.",
         "(B)"},
        {"When food is reduced in the stomach (A) the mind needs time to digest (B) take a second to digest what I said (C) nutrients are being deconstructed (D) reader's digest is a body of works",
         "The food is being deconstructed in the stomach during digestion.", "(C)"},
        {"The sun is responsible for (A) puppies learning new tricks (B) children growing up and getting old (C) flowers wilting in a vase (D) plants sprouting, blooming and wilting",
         "The sun can affect the growing of living things, like plants.", "(D)"},
    }};
}

inline DemoSet comv() {
    const std::string car_q =
        "Which one of the following statements is against common sense? (A) Because his car was damaged, he received RMB 1000 from electricity company (B) Because his car was damaged, he received RMB 1000 from insurance company";
    const std::string car_r =
        "It does not make logical sense for an electricity company to compensate someone for car damage. It is more reasonable for an insurance company to provide compensation for car damage.";
    // The published set repeats its third example; kept as published.
    return {"comv", {}, TaskFormat::multi_choice_letters('B'), {
        {"Which one of the following statements is against common sense? (A) Roses buds  eat caterpillars (B) The caterpillar eats the rose bud",
         "Statement (A) is against common sense as it goes against the natural food chain and the known behavior of roses. Roses are plants and cannot eat or consume other organisms, including caterpillars.",
         "A"},
        {"Which one of the following statements is against common sense? (A) He threw his house into the trash bin (B) He threw his food waste into the trash",
         "It is not physically possible to throw a house into a trash bin. Statement (A) goes against the laws of physics and is therefore illogical.",
         "A"},
        {car_q, car_r, "A"},
        {car_q, car_r, "A"},
    }};
}

inline DemoSet boolq() {
    return {"boolq", {}, TaskFormat::classification({"yes", "no"}), {
        {"does system of a down have 2 singers?",
         "System of a Down currently consists of Serj Tankian, Daron Malakian, Shavo Odadjian and John Dolmayan. Serj and Daron do vocals, so the band does have two singers.",
         "yes"},
        {"do iran and afghanistan speak the same language?",
         "Iran and Afghanistan both speak the Indo-European language Persian.", "yes"},
        {"is a cello and a bass the same thing?",
         "The cello is played sitting down with the instrument between the knees, whereas the double bass is played standing or sitting on a stool.",
         "no"},
        {"can you use oyster card at epsom station?",
         "Epsom railway station serves the town of Epsom in Surrey and is not in the London Oyster card zone.", "no"},
    }};
}

inline DemoSet factck() {
    return {"factck", {}, TaskFormat::classification({"true", "false"}), {
        {"On June 2017, the following claim was made: David Lloyd George lost every bid to become prime minister. Was this claim true or false?",
         "David Lloyd George served as the Prime Minister of the United Kingdom from 1916 to 1922. He also served as the Chancellor of the Exchequer and the Minister of Munitions before becoming Prime Minister. Therefore, the claim that he lost every bid to become Prime Minister is false.",
         "false"},
        {"On June 2017, the following claim was made: In 1966, George Harrison got married for the first time. Was this claim true or false?",
         "George Harrison married his first wife, model Pattie Boyd, on January 21, 1966.", "true"},
        {"On June 2017, the following claim was made: Woodrow Wilson did not live during World War I. Was this claim true or false?",
         "Woodrow Wilson was the President of the United States during World War I, serving from 1913 to 1921.", "false"},
        {"On April 17 2008, the following claim was made: Hillary Clinton has taken over $800,000 from lobbyists. Was this claim true or false?",
         "According to OpenSecrets.org, a nonpartisan research group that tracks money in politics, Hillary Clinton received over $800,000 in campaign contributions from lobbyists during her 2008 presidential campaign.",
         "true"},
    }};
}

inline DemoSet wikiqa() {
    return {"wikiqa", {}, TaskFormat::abstractive(), {
        {"On June 2017, the following claim was made: David Lloyd George lost every bid to become prime minister. Was this claim true or false?",
         "David Lloyd George served as the Prime Minister of the United Kingdom from 1916 to 1922. He also served as the Chancellor of the Exchequer and the Minister of Munitions before becoming Prime Minister. Therefore, the claim that he lost every bid to become Prime Minister is false.",
         "false"},
        {"The native language of Aaron Swartz is?",
         "Aaron Swartz was born in Chicago, Illinois, United States. Therefore, his native language is most likely English, as it is the primary language spoken in the United States.",
         "English"},
        {"The religion of Prajadhipok is?",
         "Prajadhipok was a Buddhist, as Buddhism is the predominant religion in Thailand, where he was the last absolute monarch before the country became a constitutional monarchy.",
         "Buddhism"},
        {"The country of Valletta is?",
         "Valletta is the capital city of Malta, which is a small island nation located in the Mediterranean Sea.", "Malta"},
        {"The sport played by Garry Kasparov is?",
         "Garry Kasparov is a former world chess champion, therefore the sport played by him is chess.", "chess"},
    }};
}

inline std::vector<std::string> builtin_names() {
    return {"aqua", "drop", "anli", "obqa", "comv", "boolq", "factck", "wikiqa"};
}

inline DemoSet builtin(std::string_view name) {
    if (name == "aqua") return aqua();
    if (name == "drop") return drop();
    if (name == "anli") return anli();
    if (name == "obqa") return obqa();
    if (name == "comv") return comv();
    if (name == "boolq") return boolq();
    if (name == "factck") return factck();
    if (name == "wikiqa") return wikiqa();
    throw ConfigError("unknown demonstration set '" + std::string(name) + "'");
}

/// Custom set from JSON:
///   {"name", "format", "labels"?, "question_prefix"?, "answer_prefix"?,
///    "demos": [{"question", "rationale"?, "answer", "trigger"?}]}
inline DemoSet from_json(const nlohmann::json& j) {
    try {
        DemoSet set;
        set.name = j.value("name", std::string{"custom"});
        set.style.question_prefix = j.value("question_prefix", set.style.question_prefix);
        set.style.answer_prefix = j.value("answer_prefix", set.style.answer_prefix);
        const auto kind = format_kind_from_string(j.at("format").get<std::string>());
        const auto labels = j.value("labels", std::vector<std::string>{});
        set.format = kind == FormatKind::multi_choice   ? TaskFormat::multi_choice(labels)
                     : kind == FormatKind::classification ? TaskFormat::classification(labels)
                                                          : TaskFormat::abstractive();
        for (const auto& d : j.at("demos")) {
            Demonstration demo;
            demo.question_text = d.at("question").get<std::string>();
            demo.rationale_text = d.value("rationale", std::string{});
            demo.answer_text = d.at("answer").get<std::string>();
            demo.answer_trigger = d.value("trigger", std::string(default_answer_trigger));
            set.demos.push_back(std::move(demo));
        }
        if (set.demos.empty()) throw ConfigError("demonstration set '" + set.name + "' is empty");
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("demonstration set: ") + e.what());
    }
}

/// A builtin name, or a path to a JSON demonstration file.
inline DemoSet resolve(const std::string& name_or_path) {
    for (const auto& n : builtin_names())
        if (n == name_or_path) return builtin(n);
    const std::filesystem::path p(name_or_path);
    if (!std::filesystem::exists(p)) throw ConfigError("unknown demonstration set '" + name_or_path + "'");
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
    return from_json(j);
}

} // namespace mot::demos
