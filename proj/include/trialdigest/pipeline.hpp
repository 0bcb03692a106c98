#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trialdigest/backend.hpp"
#include "trialdigest/batching.hpp"
#include "trialdigest/citations.hpp"
#include "trialdigest/error.hpp"
#include "trialdigest/hash.hpp"
#include "trialdigest/prompting.hpp"
#include "trialdigest/text.hpp"
#include "trialdigest/trial.hpp"

namespace trialdigest {

class CacheCorrupt : public Error {
public:
    explicit CacheCorrupt(const std::string& entry_path)
        : Error("corrupt cache entry: " + entry_path), path(entry_path) {}
    std::string path;
};

class CascadeDepthExceeded : public Error {
public:
    explicit CascadeDepthExceeded(int depth)
        : Error("cascade did not converge within " + std::to_string(depth) + " levels") {}
};

// Content-addressed completion cache keyed on (model, prompt, temperature).
// Writes go through a temp file and an atomic rename.
class ResponseCache {
public:
    explicit ResponseCache(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    static std::string key_of(const CompletionRequest& request) {
        char temp[32];
        std::snprintf(temp, sizeof(temp), "%.6g", request.temperature);
        std::uint64_t h = fnv1a64(request.model_id);
        h = fnv1a64(request.prompt, h ^ 0x1f);
        h = fnv1a64(temp, h ^ 0x1f);
        return hex64(h);
    }

    std::optional<CompletionResponse> lookup(const CompletionRequest& request) const {
        std::filesystem::path p = entry_path(request);
        std::lock_guard<std::mutex> lock(mutex_);
        std::ifstream in(p, std::ios::binary);
        if (!in) return std::nullopt;
        std::ostringstream ss;
        ss << in.rdbuf();
        nlohmann::json j = nlohmann::json::parse(ss.str(), nullptr, false);
        if (j.is_discarded() || !j.contains("response") || j.value("prompt", "") != request.prompt) {
            throw CacheCorrupt(p.string());
        }
        const auto& r = j["response"];
        CompletionResponse out;
        out.text = r.value("text", "");
        if (out.text.empty()) throw CacheCorrupt(p.string());
        out.input_tokens = r.value("input_tokens", 0L);
        out.output_tokens = r.value("output_tokens", 0L);
        out.backend_id = r.value("backend_id", "");
        return out;
    }

    void store(const CompletionRequest& request, const CompletionResponse& response) const {
        nlohmann::json j;
        j["model_id"] = request.model_id;
        j["prompt"] = request.prompt;
        j["temperature"] = request.temperature;
        j["response"] = {{"text", response.text},
                         {"input_tokens", response.input_tokens},
                         {"output_tokens", response.output_tokens},
                         {"backend_id", response.backend_id}};
        std::filesystem::path p = entry_path(request);
        std::filesystem::path tmp = p;
        tmp += ".tmp";
        std::lock_guard<std::mutex> lock(mutex_);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write cache entry: " + tmp.string());
            out << j.dump();
        }
        std::filesystem::rename(tmp, p);
    }

    void remove(const CompletionRequest& request) const {
        std::error_code ec;
        std::filesystem::remove(entry_path(request), ec);
    }

    std::filesystem::path entry_path(const CompletionRequest& request) const {
        return std::filesystem::path(dir_) / (key_of(request) + ".json");
    }

private:
    std::string dir_;
    mutable std::mutex mutex_;
};

// Cache-through completion. A hit skips the backend entirely; a corrupt
// entry is dropped and fetched fresh.
inline CompletionResponse cached_complete(const CompletionRequest& request,
                                          const ResponseCache& cache,
                                          CompletionBackend& backend, bool* was_hit = nullptr) {
    try {
        if (auto hit = cache.lookup(request)) {
            if (was_hit) *was_hit = true;
            return *hit;
        }
    } catch (const CacheCorrupt&) {
        cache.remove(request);
    }
    if (was_hit) *was_hit = false;
    CompletionResponse response = backend.complete(request);
    cache.store(request, response);
    return response;
}

// One summary in the cascade. Level 0 artifacts come from map prompts,
// higher levels from combines.
struct SummaryArtifact {
    std::string text;
    int level = 0;
    std::vector<int> source_batches;
    std::vector<Citation> citations;  // global index space
    std::size_t words = 0;
};

struct CallRecord {
    std::string prompt_hash;
    std::string response_hash;
    std::string backend_id;
};

struct HallucinationEvent {
    int level = 0;
    int batch_ordinal = -1;  // -1 for combine-stage events
    int index = 0;           // the offending citation index as written
    std::string detail;
};

struct RunRecord {
    std::string corpus_fingerprint;
    std::size_t corpus_size = 0;
    nlohmann::json config_snapshot;
    std::vector<CallRecord> calls;  // backend invocations, in pipeline order
    std::size_t llm_call_count = 0;
    std::size_t cache_hits = 0;
    std::vector<HallucinationEvent> hallucination_events;
    std::vector<std::string> deviations;  // e.g. final length outside requested range
    std::vector<std::string> truncated_trial_ids;
    SummaryArtifact final;
    std::string reference_list;
};

struct PipelineConfig {
    BudgetPolicy policy;
    std::string model_id = "gpt-3.5-turbo";
    double temperature = 0.0;
    int reduce_fan_in = 0;  // 0 = unlimited, single combine when it fits
    int max_cascade_depth = 4;
    int concurrency_limit = 4;
    std::string cache_dir;  // empty disables caching
    bool reprompt_on_range_violation = false;
    PromptTemplates templates = PromptTemplates::defaults();
    std::string audience = "clinical research coordinators";

    void check() const {
        policy.check();
        if (max_cascade_depth < 1) throw InvariantViolation("max_cascade_depth must be >= 1");
        if (concurrency_limit < 1) throw InvariantViolation("concurrency_limit must be >= 1");
        if (reduce_fan_in == 1 || reduce_fan_in < 0) {
            throw InvariantViolation("reduce_fan_in must be 0 (unlimited) or >= 2");
        }
    }

    nlohmann::json to_json() const {
        return {{"batch_size", policy.batch_size},
                {"words_per_trial", policy.words_per_trial},
                {"full_batch_words", policy.full_batch_words},
                {"combine_min_words", policy.combine_min_words},
                {"combine_max_words", policy.combine_max_words},
                {"token_limit", policy.token_limit},
                {"model_id", model_id},
                {"temperature", temperature},
                {"reduce_fan_in", reduce_fan_in},
                {"max_cascade_depth", max_cascade_depth},
                {"concurrency_limit", concurrency_limit},
                {"cache_dir", cache_dir},
                {"reprompt_on_range_violation", reprompt_on_range_violation},
                {"audience", audience}};
    }
};

// Expected backend invocations for a clean run: one per batch plus a
// single combine when there is more than one batch.
inline long expected_call_count(long n_trials, const PipelineConfig& config) {
    if (n_trials < 1) throw InvariantViolation("expected_call_count needs n_trials >= 1");
    long per_batch = config.policy.batch_size;
    long batches = (n_trials + per_batch - 1) / per_batch;
    return batches + (batches > 1 ? 1 : 0);
}

inline std::string display_field_name(const MedicalField& field) {
    std::string out = field.name();
    for (char& c : out) {
        if (c == '_') c = ' ';
    }
    return out;
}

inline std::string corpus_fingerprint(const Corpus& corpus) {
    std::uint64_t h = fnv1a64(corpus.device);
    h = fnv1a64(corpus.field.name(), h);
    h = fnv1a64(to_string(corpus.recency), h);
    for (const auto& t : corpus.trials) {
        h = fnv1a64(t.id, h);
        h = fnv1a64(t.title, h);
        h = fnv1a64(t.brief_summary, h);
    }
    return hex64(h);
}

namespace detail {

// Runs one completion through the cache when configured. The CallRecord is
// present only for real backend invocations, never for cache hits.
inline std::pair<CompletionResponse, std::optional<CallRecord>> run_completion(
    const CompletionRequest& request, const std::optional<ResponseCache>& cache,
    CompletionBackend& backend) {
    bool hit = false;
    CompletionResponse response;
    if (cache) {
        response = cached_complete(request, *cache, backend, &hit);
    } else {
        response = backend.complete(request);
    }
    std::optional<CallRecord> call;
    if (!hit) {
        call = CallRecord{content_hash(request.prompt), content_hash(response.text),
                          response.backend_id};
    }
    return {std::move(response), std::move(call)};
}

inline std::string strip_out_of_range(const std::string& text, std::size_t corpus_size,
                                      std::vector<Citation>& dropped) {
    std::string out;
    out.reserve(text.size());
    std::size_t prev = 0;
    for_each_citation_token(text, [&](int index, std::size_t begin, std::size_t end) {
        out.append(text.substr(prev, begin - prev));
        if (index >= 1 && static_cast<std::size_t>(index) <= corpus_size) {
            out.append(text.substr(begin, end - begin));
        } else {
            dropped.push_back(Citation{index, begin, end});
        }
        prev = end;
    });
    out.append(text.substr(prev));
    return out;
}

inline SummaryArtifact make_artifact(std::string text, int level, std::vector<int> sources) {
    SummaryArtifact a;
    a.text = std::move(text);
    a.level = level;
    a.source_batches = std::move(sources);
    a.citations = extract_citations(a.text);
    a.words = word_count(a.text);
    return a;
}

} // namespace detail

// Runs the full cascade over one corpus: positional batches, one map
// summary per batch, global renumbering, then combines until a single
// summary remains. Map-stage calls run concurrently up to the configured
// limit; results and call records are assembled in batch order so runs
// are deterministic.
inline RunRecord summarize_corpus(const Corpus& corpus, const PipelineConfig& config,
                                  CompletionBackend& backend) {
    config.check();
    corpus.check_unique_ids();
    if (corpus.trials.empty()) throw EmptyCorpus{};

    const std::string field_display = display_field_name(corpus.field);
    auto render_for_batch = [&](const Batch& b) {
        MapPromptInput input;
        input.device = corpus.device;
        input.field_name = field_display;
        input.batch = b;
        input.budget_words = word_budget(b, config.policy);
        input.audience = config.audience;
        return render_map_prompt(input, config.templates);
    };

    std::vector<Batch> batches = make_batches(
        corpus, config.policy, [&](const Batch& b) { return estimate_tokens(render_for_batch(b)); });

    RunRecord record;
    record.corpus_fingerprint = corpus_fingerprint(corpus);
    record.corpus_size = corpus.size();
    record.config_snapshot = config.to_json();
    for (const auto& b : batches) {
        record.truncated_trial_ids.insert(record.truncated_trial_ids.end(),
                                          b.truncated_trial_ids.begin(),
                                          b.truncated_trial_ids.end());
    }

    std::optional<ResponseCache> cache;
    if (!config.cache_dir.empty()) cache.emplace(config.cache_dir);
    std::atomic<std::size_t> cache_hits{0};

    // map stage
    std::vector<SummaryArtifact> artifacts(batches.size());
    std::vector<std::vector<Citation>> map_dropped(batches.size());
    std::vector<std::optional<CallRecord>> map_calls(batches.size());
    {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= batches.size()) return;
                try {
                    const Batch& batch = batches[i];
                    CompletionRequest request;
                    request.model_id = config.model_id;
                    request.prompt = render_for_batch(batch);
                    request.temperature = config.temperature;
                    request.max_output_tokens = 2L * word_budget(batch, config.policy);
                    auto [response, call] = detail::run_completion(request, cache, backend);
                    if (call) {
                        map_calls[i] = std::move(call);
                    } else {
                        cache_hits.fetch_add(1);
                    }
                    CitationMap map{batch.global_offset, batch.trials.size(), corpus.size()};
                    RemapResult remapped = remap_citations_lenient(response.text, map);
                    map_dropped[i] = std::move(remapped.dropped);
                    artifacts[i] =
                        detail::make_artifact(std::move(remapped.text), 0, {batch.ordinal});
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next.store(batches.size());
                    return;
                }
            }
        };
        std::size_t n_workers = std::min<std::size_t>(
            static_cast<std::size_t>(config.concurrency_limit), batches.size());
        if (n_workers <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        if (failure) std::rethrow_exception(failure);
    }
    for (std::size_t i = 0; i < batches.size(); ++i) {
        if (map_calls[i]) record.calls.push_back(std::move(*map_calls[i]));
        for (const auto& c : map_dropped[i]) {
            record.hallucination_events.push_back(HallucinationEvent{
                0, batches[i].ordinal, c.index,
                "batch-local citation [" + std::to_string(c.index) + "] outside batch"});
        }
    }

    auto build_reduce_input = [&](const std::vector<SummaryArtifact>& group) {
        ReducePromptInput input;
        input.device = corpus.device;
        input.field_name = field_display;
        input.min_words = config.policy.combine_min_words;
        input.max_words = config.policy.combine_max_words;
        input.audience = config.audience;
        std::set<int> cited;
        for (const auto& a : group) {
            input.intermediate_summaries.push_back(a.text);
            for (const auto& c : a.citations) cited.insert(c.index);
        }
        std::vector<std::pair<int, std::string>> entries;
        for (int idx : cited) {
            entries.emplace_back(idx, corpus.trials[static_cast<std::size_t>(idx - 1)].title);
        }
        input.reference_list = render_reference_block(entries);
        return input;
    };

    std::optional<CompletionRequest> last_reduce_request;
    auto combine_group = [&](const std::vector<SummaryArtifact>& group, int level) {
        std::vector<int> sources;
        for (const auto& a : group) {
            sources.insert(sources.end(), a.source_batches.begin(), a.source_batches.end());
        }
        CompletionRequest request;
        request.model_id = config.model_id;
        request.prompt = render_reduce_prompt(build_reduce_input(group), config.templates);
        request.temperature = config.temperature;
        request.max_output_tokens = 2L * config.policy.combine_max_words;
        auto [response, call] = detail::run_completion(request, cache, backend);
        if (call) {
            record.calls.push_back(std::move(*call));
        } else {
            cache_hits.fetch_add(1);
        }
        last_reduce_request = request;
        return detail::make_artifact(response.text, level, std::move(sources));
    };

    // combine stage, one level at a time; groups are greedy in artifact
    // order and only grow while the reduce prompt fits the token limit. A
    // group that cannot accept a second member passes through unchanged;
    // if that ever stops the artifact count from shrinking, the depth
    // guard turns it into an error.
    int level = 1;
    while (artifacts.size() > 1) {
        if (level > config.max_cascade_depth) {
            throw CascadeDepthExceeded(config.max_cascade_depth);
        }
        std::vector<SummaryArtifact> next_level;
        std::size_t i = 0;
        while (i < artifacts.size()) {
            std::vector<SummaryArtifact> group;
            group.push_back(artifacts[i++]);
            while (i < artifacts.size()) {
                if (config.reduce_fan_in > 0 &&
                    group.size() >= static_cast<std::size_t>(config.reduce_fan_in)) {
                    break;
                }
                group.push_back(artifacts[i]);
                if (estimate_tokens(render_reduce_prompt(build_reduce_input(group),
                                                         config.templates)) >
                    config.policy.token_limit) {
                    group.pop_back();
                    break;
                }
                ++i;
            }
            if (group.size() == 1) {
                next_level.push_back(std::move(group.front()));
            } else {
                next_level.push_back(combine_group(group, level));
            }
        }
        artifacts = std::move(next_level);
        ++level;
    }

    SummaryArtifact final_artifact = std::move(artifacts.front());

    // final validation: out-of-range citations are stripped and logged
    auto finalize = [&](SummaryArtifact a) {
        std::vector<Citation> dropped;
        std::string cleaned = detail::strip_out_of_range(a.text, corpus.size(), dropped);
        for (const auto& c : dropped) {
            record.hallucination_events.push_back(HallucinationEvent{
                a.level, -1, c.index,
                "final citation [" + std::to_string(c.index) + "] outside corpus"});
        }
        return detail::make_artifact(std::move(cleaned), a.level, std::move(a.source_batches));
    };
    final_artifact = finalize(std::move(final_artifact));

    auto range_deviation = [&](const SummaryArtifact& a) -> std::optional<std::string> {
        if (a.level == 0) return std::nullopt;
        const auto lo = static_cast<std::size_t>(config.policy.combine_min_words);
        const auto hi = static_cast<std::size_t>(config.policy.combine_max_words);
        if (a.words < lo || a.words > hi) {
            return "final summary is " + std::to_string(a.words) +
                   " words, outside requested " + std::to_string(lo) + "-" + std::to_string(hi);
        }
        return std::nullopt;
    };

    if (auto deviation = range_deviation(final_artifact)) {
        record.deviations.push_back(*deviation);
        // optional single retry of the last combine, bypassing the cache;
        // only useful for nondeterministic backends
        if (config.reprompt_on_range_violation && last_reduce_request) {
            CompletionResponse retry = backend.complete(*last_reduce_request);
            record.calls.push_back(CallRecord{content_hash(last_reduce_request->prompt),
                                              content_hash(retry.text), retry.backend_id});
            if (cache) cache->store(*last_reduce_request, retry);
            SummaryArtifact redone = finalize(
                detail::make_artifact(retry.text, final_artifact.level,
                                      final_artifact.source_batches));
            if (auto still = range_deviation(redone)) {
                record.deviations.push_back(*still + " (after re-prompt)");
            }
            final_artifact = std::move(redone);
        }
    }

    std::set<int> final_indices;
    for (const auto& c : final_artifact.citations) final_indices.insert(c.index);
    record.reference_list = render_reference_list(final_indices, corpus);
    record.final = std::move(final_artifact);
    record.llm_call_count = record.calls.size();
    record.cache_hits = cache_hits.load();
    return record;
}

// Plain-text output document: summary paragraph, blank line, references.
inline std::string final_document(const RunRecord& record) {
    std::string out = record.final.text;
    if (!record.reference_list.empty()) {
        out += "\n\nReferences:\n";
        out += record.reference_list;
    }
    out += "\n";
    return out;
}

inline nlohmann::json run_record_json(const RunRecord& record) {
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& c : record.calls) {
        calls.push_back({{"prompt_hash", c.prompt_hash},
                         {"response_hash", c.response_hash},
                         {"backend_id", c.backend_id}});
    }
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : record.hallucination_events) {
        events.push_back({{"level", e.level},
                          {"batch", e.batch_ordinal},
                          {"index", e.index},
                          {"detail", e.detail}});
    }
    std::set<int> unique;
    for (const auto& c : record.final.citations) unique.insert(c.index);
    nlohmann::json j;
    j["corpus_fingerprint"] = record.corpus_fingerprint;
    j["config"] = record.config_snapshot;
    j["calls"] = calls;
    j["llm_call_count"] = record.llm_call_count;
    j["cache_hits"] = record.cache_hits;
    j["hallucination_events"] = events;
    j["deviations"] = record.deviations;
    j["truncated_trials"] = record.truncated_trial_ids;
    j["corpus_size"] = record.corpus_size;
    j["summary"] = {{"text", record.final.text},
                    {"level", record.final.level},
                    {"words", record.final.words},
                    {"cited_indices", std::vector<int>(unique.begin(), unique.end())},
                    {"unique_citations", unique.size()},
                    {"coverage", record.corpus_size
                                     ? static_cast<double>(unique.size()) /
                                           static_cast<double>(record.corpus_size)
                                     : 0.0}};
    j["reference_list"] = record.reference_list;
    return j;
}

} // namespace trialdigest
