#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "trialdigest/batching.hpp"
#include "trialdigest/error.hpp"
#include "trialdigest/text.hpp"

namespace trialdigest {

class AuthError : public Error {
public:
    explicit AuthError(const std::string& what) : Error(what) {}
};

class RateLimited : public Error {
public:
    explicit RateLimited(std::chrono::milliseconds retry_after_ms)
        : Error("rate limited"), retry_after(retry_after_ms) {}
    std::chrono::milliseconds retry_after;
};

class ContextOverflow : public Error {
public:
    explicit ContextOverflow(const std::string& what) : Error(what) {}
};

class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error(what) {}
};

class MalformedResponse : public Error {
public:
    explicit MalformedResponse(const std::string& what) : Error(what) {}
};

class UnparseablePrompt : public Error {
public:
    explicit UnparseablePrompt(const std::string& what) : Error(what) {}
};

struct CompletionRequest {
    std::string model_id;
    std::string prompt;
    double temperature = 0.0;
    long max_output_tokens = 0;
};

struct CompletionResponse {
    std::string text;
    long input_tokens = 0;
    long output_tokens = 0;
    std::string backend_id;
    std::chrono::milliseconds latency{0};
};

// Exponential backoff with jitter. Retryable errors are decided by the
// caller; this only shapes the delays.
struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{250};
    std::chrono::milliseconds max_delay{8000};
    double jitter = 0.25;

    std::chrono::milliseconds delay_for(int attempt, std::uint32_t salt) const {
        double exp = static_cast<double>(base_delay.count()) * std::pow(2.0, attempt);
        exp = std::min(exp, static_cast<double>(max_delay.count()));
        std::mt19937 rng(0x9e3779b9u ^ salt ^ static_cast<std::uint32_t>(attempt));
        std::uniform_real_distribution<double> dist(1.0 - jitter, 1.0 + jitter);
        return std::chrono::milliseconds(static_cast<long>(exp * dist(rng)));
    }
};

template <typename Fn, typename Retryable>
auto with_retries(const RetryPolicy& policy, std::uint32_t salt, Fn&& fn, Retryable&& retryable)
    -> decltype(fn()) {
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const Error& e) {
            if (attempt + 1 >= policy.max_attempts || !retryable(e)) throw;
            std::this_thread::sleep_for(policy.delay_for(attempt, salt));
        }
    }
}

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual CompletionResponse complete(const CompletionRequest& request) = 0;
    virtual std::string id() const = 0;
};

namespace detail {

inline std::optional<long> parse_long_at(std::string_view s, std::size_t pos, std::size_t* end) {
    long value = 0;
    std::size_t i = pos;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
        value = value * 10 + (s[i] - '0');
        ++i;
    }
    if (i == pos) return std::nullopt;
    if (end) *end = i;
    return value;
}

struct ParsedBudget {
    int target_words = 0;   // hard cap
    int min_words = 0;      // 0 for single-budget prompts
};

inline ParsedBudget parse_budget(std::string_view prompt) {
    // "Write a {W} word thesis" or "Write a {min}-{max}-word thesis"
    static const std::string_view marker = "Write a ";
    std::size_t pos = prompt.find(marker);
    while (pos != std::string_view::npos) {
        std::size_t cursor = pos + marker.size();
        std::size_t end = 0;
        auto first = parse_long_at(prompt, cursor, &end);
        if (first) {
            if (end < prompt.size() && prompt[end] == '-') {
                std::size_t end2 = 0;
                auto second = parse_long_at(prompt, end + 1, &end2);
                if (second && prompt.compare(end2, 6, "-word ") == 0) {
                    return ParsedBudget{static_cast<int>(*second), static_cast<int>(*first)};
                }
            } else if (prompt.compare(end, 6, " word ") == 0) {
                return ParsedBudget{static_cast<int>(*first), 0};
            }
        }
        pos = prompt.find(marker, pos + 1);
    }
    throw UnparseablePrompt("no word budget found in prompt");
}

// Returns the fenced body directly following "{label} ```". The fence must
// open right after the label so payload text mentioning the label cannot
// hijack the parse.
inline std::string fenced_block(std::string_view prompt, std::string_view label) {
    std::size_t lab = 0;
    while ((lab = prompt.find(label, lab)) != std::string_view::npos) {
        std::size_t open = lab + label.size();
        while (open < prompt.size() && (prompt[open] == ' ' || prompt[open] == '\n')) ++open;
        if (prompt.compare(open, 3, "```") == 0) {
            std::size_t close = prompt.find("```", open + 3);
            if (close == std::string_view::npos) return {};
            std::string_view body = prompt.substr(open + 3, close - open - 3);
            while (!body.empty() && (body.front() == '\n' || body.front() == ' ')) {
                body.remove_prefix(1);
            }
            while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) {
                body.remove_suffix(1);
            }
            return std::string(body);
        }
        lab += label.size();
    }
    return {};
}

struct MockUnit {
    std::string text;
    std::size_t words = 0;
    std::vector<int> cited;
};

inline std::vector<MockUnit> map_units(const std::string& block) {
    // entries look like "{i}. {title}\n{description}" separated by blank lines
    std::vector<MockUnit> units;
    std::size_t pos = 0;
    while (pos < block.size()) {
        std::size_t entry_end = block.find("\n\n", pos);
        if (entry_end == std::string::npos) entry_end = block.size();
        std::string_view entry(block.data() + pos, entry_end - pos);
        std::size_t num_end = 0;
        auto index = parse_long_at(entry, 0, &num_end);
        if (index && entry.compare(num_end, 2, ". ") == 0) {
            std::size_t title_end = entry.find('\n');
            std::string description = title_end == std::string_view::npos
                                          ? std::string{}
                                          : std::string(entry.substr(title_end + 1));
            std::string sentence = first_sentence(description);
            if (sentence.empty()) sentence = std::string(entry.substr(num_end + 2, title_end - num_end - 2));
            if (!sentence.empty() && sentence.back() != '.' && sentence.back() != '!' &&
                sentence.back() != '?') {
                sentence.push_back('.');
            }
            MockUnit u;
            // terminal punctuation stays attached to the last word so the
            // marker never strands a punctuation token under word_count
            u.text = sentence + " [" + std::to_string(*index) + "]";
            u.words = word_count(u.text);
            u.cited.push_back(static_cast<int>(*index));
            units.push_back(std::move(u));
        }
        pos = entry_end + 2;
        if (entry_end == block.size()) break;
    }
    if (units.empty()) throw UnparseablePrompt("no trial entries in fenced block");
    return units;
}

inline std::vector<MockUnit> reduce_units(const std::string& block) {
    std::vector<MockUnit> units;
    for (auto& sentence : split_sentences(block)) {
        MockUnit u;
        u.words = word_count(sentence);
        for_each_citation_token(sentence, [&](int idx, std::size_t, std::size_t) {
            u.cited.push_back(idx);
        });
        u.text = std::move(sentence);
        units.push_back(std::move(u));
    }
    if (units.empty()) throw UnparseablePrompt("no sentences in fenced block");
    return units;
}

// First `allowance` words of the unit body, citation markers dropped.
inline std::string truncate_to_words(const std::string& sentence, std::size_t allowance) {
    auto words = split_words(strip_citation_markers(sentence));
    std::string out;
    for (std::size_t i = 0; i < allowance && i < words.size(); ++i) {
        if (!out.empty()) out.push_back(' ');
        out += words[i];
    }
    return out;
}

} // namespace detail

// Deterministic extractive summarizer over prompts rendered by this
// library. Map prompts: first sentence of each trial description plus its
// citation, greedily packed into the word budget; at least ceil(k/2)
// distinct trials are always cited, hard-truncating sentences if the
// budget is too tight for that floor. Reduce prompts: sentences of the
// Summary fence packed the same way; citations are carried through, never
// invented.
inline std::string mock_complete(const std::string& prompt) {
    std::string block = detail::fenced_block(prompt, "Trials:");
    bool map_mode = !block.empty();
    if (!map_mode) block = detail::fenced_block(prompt, "Summary:");
    if (block.empty()) throw UnparseablePrompt("no Trials/Summary fence in prompt");

    // read the budget from the template region, never from payload text:
    // the map instruction precedes its fence, the reduce instruction
    // follows the References fence
    std::string budget_region;
    if (map_mode) {
        budget_region = prompt.substr(0, prompt.find("Trials:"));
    } else {
        std::size_t refs = prompt.rfind("References:");
        budget_region = refs == std::string::npos ? prompt : prompt.substr(refs);
        std::size_t close = budget_region.rfind("```");
        if (close != std::string::npos) budget_region = budget_region.substr(close);
    }
    detail::ParsedBudget budget = detail::parse_budget(budget_region);

    std::vector<detail::MockUnit> units =
        map_mode ? detail::map_units(block) : detail::reduce_units(block);
    const std::size_t cap = static_cast<std::size_t>(budget.target_words);
    const std::size_t floor =
        map_mode ? (units.size() + 1) / 2 : 0;  // distinct-citation floor, map only

    std::string out;
    std::size_t used = 0;
    std::set<int> distinct;
    std::size_t taken = 0;
    for (; taken < units.size(); ++taken) {
        const auto& u = units[taken];
        if (used + u.words > cap) break;
        if (!out.empty()) out.push_back(' ');
        out += u.text;
        used += u.words;
        distinct.insert(u.cited.begin(), u.cited.end());
    }
    // enforce the citation floor with truncated sentences
    for (std::size_t i = taken; i < units.size() && distinct.size() < floor; ++i) {
        const auto& u = units[i];
        std::size_t allowance = cap > used ? cap - used : 1;
        if (!out.empty()) out.push_back(' ');
        if (allowance >= u.words) {
            out += u.text;
            used += u.words;
        } else {
            std::string body = detail::truncate_to_words(u.text, allowance);
            if (!body.empty() && body.back() != '.' && body.back() != '!' &&
                body.back() != '?') {
                body.push_back('.');
            }
            std::string marker;
            for (int c : u.cited) marker += " [" + std::to_string(c) + "]";
            out += body + marker;
            used += word_count(body);
        }
        distinct.insert(u.cited.begin(), u.cited.end());
    }
    return out;
}

class MockBackend : public CompletionBackend {
public:
    CompletionResponse complete(const CompletionRequest& request) override {
        auto start = std::chrono::steady_clock::now();
        CompletionResponse r;
        r.text = mock_complete(request.prompt);
        r.input_tokens = estimate_tokens(request.prompt);
        r.output_tokens = estimate_tokens(r.text);
        r.backend_id = id();
        r.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        return r;
    }

    std::string id() const override { return "mock"; }
};

// Reads the credential from the environment, never from argv.
inline std::string credential_from_env(const std::string& env_var) {
    const char* value = std::getenv(env_var.c_str());
    return value ? std::string(value) : std::string{};
}

} // namespace trialdigest
