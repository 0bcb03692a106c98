#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "trialdigest/batching.hpp"
#include "trialdigest/error.hpp"
#include "trialdigest/text.hpp"
#include "trialdigest/trial.hpp"

namespace trialdigest {

// Prompt templates are plain UTF-8 text with {name} placeholders. The
// shipped defaults are the production wording; deployments can override
// them from files without a rebuild.
struct PromptTemplates {
    std::string map_template;
    std::string reduce_template;

    static PromptTemplates defaults() {
        PromptTemplates t;
        t.map_template =
            "Your task is to extract relevant information from {trial_count} {trial_word} "
            "delimited in the triple backticks labeled from 1 to {trial_count} to construct "
            "an argument about the purpose of {device} in {field} trials. Each trial "
            "contains a title and description. Your reader will be {audience}.\n"
            "\n"
            "Write a {budget_words} word thesis with references to the trials in the "
            "following format: [1].\n"
            "\n"
            "Trials: ```\n{trials}\n```\n";
        t.reduce_template =
            "Your task is to extract relevant information from the provided text and "
            "references to construct a cumulative argument about the purpose of {device} "
            "in {field} trials. Each paragraph includes references to clinical trials in "
            "the following format: [1]. Weigh each paragraph according to its word count, "
            "weighing longer paragraphs more than shorter ones. Your reader will be "
            "{audience}.\n"
            "Summary: ```\n{summaries}\n```\n"
            "References: ```\n{references}\n```\n"
            "Write a {min_words}-{max_words}-word thesis with references to the trials in "
            "the following format: [1].\n";
        return t;
    }

    static std::string load_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read template file: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
};

struct MapPromptInput {
    std::string device;
    std::string field_name;   // display form, e.g. "general physiology"
    Batch batch;
    int budget_words = 0;
    std::string audience = "clinical research coordinators";
};

struct ReducePromptInput {
    std::string device;
    std::string field_name;
    std::vector<std::string> intermediate_summaries;  // already in global index space
    std::string reference_list;                       // rendered "{index}. {title}" lines
    int min_words = 0;
    int max_words = 0;
    std::string audience = "clinical research coordinators";
};

namespace detail {

inline std::string substitute(std::string_view tmpl,
                              const std::unordered_map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            std::size_t close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                std::string key(tmpl.substr(i + 1, close - i - 1));
                auto it = values.find(key);
                if (it == values.end()) {
                    throw InvariantViolation("unknown template placeholder: {" + key + "}");
                }
                out += it->second;
                i = close + 1;
                continue;
            }
        }
        out.push_back(tmpl[i]);
        ++i;
    }
    return out;
}

// Payload text must not break the prompt's fences.
inline std::string defuse_fences(std::string text) {
    std::size_t pos = 0;
    while ((pos = text.find("```", pos)) != std::string::npos) {
        text.replace(pos, 3, "'''");
    }
    return text;
}

} // namespace detail

// Renders the per-batch prompt: task sentence, audience, word-budget
// instruction, then the trial block fenced in triple backticks with each
// trial as "{index}. {title}" and its description on the following line.
inline std::string render_map_prompt(const MapPromptInput& input,
                                     const PromptTemplates& templates = PromptTemplates::defaults()) {
    if (input.batch.trials.empty()) throw InvariantViolation("map prompt needs a non-empty batch");
    if (input.budget_words < 13) throw InvariantViolation("map budget below 13 words");
    std::string trials_block;
    int index = 0;
    for (const auto& t : input.batch.trials) {
        ++index;
        if (t.title.empty() || t.brief_summary.empty()) {
            throw InvariantViolation("trial " + t.id + " lacks title or description");
        }
        if (!trials_block.empty()) trials_block += "\n\n";
        trials_block += std::to_string(index);
        trials_block += ". ";
        trials_block += detail::defuse_fences(t.title);
        trials_block += "\n";
        trials_block += detail::defuse_fences(t.brief_summary);
    }
    const std::size_t count = input.batch.trials.size();
    return detail::substitute(
        templates.map_template,
        {
            {"trial_count", std::to_string(count)},
            {"trial_word", count == 1 ? "trial" : "trials"},
            {"device", input.device},
            {"field", input.field_name},
            {"audience", input.audience},
            {"budget_words", std::to_string(input.budget_words)},
            {"trials", trials_block},
        });
}

// Renders the combine prompt over already-renumbered intermediate
// summaries plus the reference block they cite into.
inline std::string render_reduce_prompt(const ReducePromptInput& input,
                                        const PromptTemplates& templates = PromptTemplates::defaults()) {
    if (input.intermediate_summaries.size() < 2) {
        throw InvariantViolation("reduce prompt needs at least 2 intermediate summaries");
    }
    if (input.min_words >= input.max_words) {
        throw InvariantViolation("reduce word range is empty");
    }
    std::unordered_set<int> listed;
    {
        std::istringstream lines(input.reference_list);
        std::string line;
        while (std::getline(lines, line)) {
            std::size_t i = 0;
            int value = 0;
            while (i < line.size() && line[i] >= '0' && line[i] <= '9') {
                value = value * 10 + (line[i] - '0');
                ++i;
            }
            if (i > 0) listed.insert(value);
        }
    }
    std::string summaries_block;
    for (const auto& s : input.intermediate_summaries) {
        for_each_citation_token(s, [&](int idx, std::size_t, std::size_t) {
            if (!listed.count(idx)) {
                throw InvariantViolation("summary cites [" + std::to_string(idx) +
                                         "] which is not in the reference list");
            }
        });
        if (!summaries_block.empty()) summaries_block += "\n\n";
        summaries_block += detail::defuse_fences(s);
    }
    return detail::substitute(
        templates.reduce_template,
        {
            {"device", input.device},
            {"field", input.field_name},
            {"audience", input.audience},
            {"summaries", summaries_block},
            {"references", detail::defuse_fences(input.reference_list)},
            {"min_words", std::to_string(input.min_words)},
            {"max_words", std::to_string(input.max_words)},
        });
}

// Reference block for the reduce prompt, one "{index}. {title}" per line.
inline std::string render_reference_block(const std::vector<std::pair<int, std::string>>& entries) {
    std::string out;
    for (const auto& [index, title] : entries) {
        if (!out.empty()) out += "\n";
        out += std::to_string(index);
        out += ". ";
        out += title;
    }
    return out;
}

} // namespace trialdigest
