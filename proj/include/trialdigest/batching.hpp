#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "trialdigest/error.hpp"
#include "trialdigest/text.hpp"
#include "trialdigest/trial.hpp"

namespace trialdigest {

class EmptyCorpus : public Error {
public:
    EmptyCorpus() : Error("corpus is empty") {}
};

struct BudgetPolicy {
    int batch_size = 15;
    int words_per_trial = 13;
    int full_batch_words = 200;
    int combine_min_words = 150;
    int combine_max_words = 250;
    int token_limit = 4096;

    void check() const {
        if (batch_size < 1) throw InvariantViolation("batch_size must be >= 1");
        if (combine_min_words >= combine_max_words) {
            throw InvariantViolation("combine word range is empty");
        }
        if (words_per_trial * batch_size > full_batch_words + 5) {
            throw InvariantViolation("words_per_trial * batch_size exceeds full batch budget");
        }
    }
};

// A contiguous slice of corpus trials. global_offset is the 0-based index
// of the first trial; with no oversize splitting it equals
// ordinal * batch_size.
struct Batch {
    int ordinal = 0;
    std::vector<Trial> trials;
    std::size_t global_offset = 0;
    std::vector<std::string> truncated_trial_ids;

    std::size_t size() const { return trials.size(); }
};

// Deterministic backend-agnostic token estimate: ceil(chars / 4).
inline long estimate_tokens(std::string_view text) {
    return static_cast<long>((text.size() + 3) / 4);
}

// Positional partition into batches of policy.batch_size; only the last
// batch may be smaller.
inline std::vector<Batch> make_batches(const Corpus& corpus, const BudgetPolicy& policy) {
    policy.check();
    if (corpus.trials.empty()) throw EmptyCorpus{};
    std::vector<Batch> batches;
    const std::size_t n = corpus.trials.size();
    const std::size_t k = static_cast<std::size_t>(policy.batch_size);
    for (std::size_t start = 0; start < n; start += k) {
        Batch b;
        b.ordinal = static_cast<int>(batches.size());
        b.global_offset = start;
        std::size_t stop = std::min(start + k, n);
        b.trials.assign(corpus.trials.begin() + static_cast<std::ptrdiff_t>(start),
                        corpus.trials.begin() + static_cast<std::ptrdiff_t>(stop));
        batches.push_back(std::move(b));
    }
    return batches;
}

// Token cost of a batch's rendered prompt, supplied by the caller so this
// module stays independent of the template engine.
using PromptCostFn = std::function<long(const Batch&)>;

namespace detail {

// Cuts a description so the rendered prompt fits, keeping whole sentences
// where possible. Falls back to a hard character cut for a single
// monster sentence.
inline void truncate_trial_to_fit(Batch& batch, const PromptCostFn& cost, long token_limit) {
    Trial& t = batch.trials.front();
    auto sentences = split_sentences(t.brief_summary);
    const std::string original = t.brief_summary;
    while (!sentences.empty()) {
        sentences.pop_back();
        std::string rebuilt;
        for (const auto& s : sentences) {
            if (!rebuilt.empty()) rebuilt.push_back(' ');
            rebuilt += s;
        }
        t.brief_summary = rebuilt;
        if (!rebuilt.empty() && cost(batch) <= token_limit) {
            t.summary_truncated = true;
            batch.truncated_trial_ids.push_back(t.id);
            return;
        }
    }
    // no sentence prefix fits; cut characters until the prompt does
    t.brief_summary = original;
    while (!t.brief_summary.empty() && cost(batch) > token_limit) {
        std::size_t cut = t.brief_summary.size() / 2;
        t.brief_summary.resize(cut);
    }
    t.summary_truncated = true;
    batch.truncated_trial_ids.push_back(t.id);
}

} // namespace detail

// Partition that also guarantees every batch's rendered prompt fits the
// token limit: oversize batches are halved recursively; a single trial
// that alone exceeds the limit has its description truncated at a
// sentence boundary.
inline std::vector<Batch> make_batches(const Corpus& corpus, const BudgetPolicy& policy,
                                       const PromptCostFn& prompt_cost) {
    std::vector<Batch> pending = make_batches(corpus, policy);
    std::vector<Batch> fitted;
    while (!pending.empty()) {
        Batch b = std::move(pending.front());
        pending.erase(pending.begin());
        if (prompt_cost(b) <= policy.token_limit) {
            fitted.push_back(std::move(b));
            continue;
        }
        if (b.trials.size() == 1) {
            detail::truncate_trial_to_fit(b, prompt_cost, policy.token_limit);
            fitted.push_back(std::move(b));
            continue;
        }
        std::size_t half = (b.trials.size() + 1) / 2;
        Batch left, right;
        left.global_offset = b.global_offset;
        left.trials.assign(b.trials.begin(), b.trials.begin() + static_cast<std::ptrdiff_t>(half));
        right.global_offset = b.global_offset + half;
        right.trials.assign(b.trials.begin() + static_cast<std::ptrdiff_t>(half), b.trials.end());
        pending.insert(pending.begin(), std::move(right));
        pending.insert(pending.begin(), std::move(left));
    }
    for (std::size_t i = 0; i < fitted.size(); ++i) fitted[i].ordinal = static_cast<int>(i);
    return fitted;
}

// 200 words for a full batch, otherwise 13 words per trial (defaults).
inline int word_budget(const Batch& batch, const BudgetPolicy& policy) {
    if (batch.trials.empty()) throw InvariantViolation("word_budget of empty batch");
    if (batch.trials.size() == static_cast<std::size_t>(policy.batch_size)) {
        return policy.full_batch_words;
    }
    return policy.words_per_trial * static_cast<int>(batch.trials.size());
}

} // namespace trialdigest
