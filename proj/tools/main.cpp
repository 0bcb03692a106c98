#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <trialdigest/trialdigest.hpp>

namespace {

using nlohmann::json;
using namespace trialdigest;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw IoError("config file is not a JSON object: " + path);
    return j;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path);
    out << content;
    if (!out) throw IoError("short write: " + path);
}

// Fills defaults from the config file; explicitly passed flags win.
template <typename T>
void apply_config(const CLI::App& app, const std::string& flag, const json& config,
                  const std::string& key, T& value) {
    if (app.count(flag) == 0 && config.contains(key)) {
        value = config[key].get<T>();
    }
}

struct FetchOptions {
    std::string query;
    std::string out_path;
    std::string config_path;
    std::string base_url = "https://clinicaltrials.gov";
    std::string device;
    std::string field = "other";
    std::string recency;
    std::string reference_date;
    int page_size = 100;
    long max_records = 1000;
    bool keep_all = false;
};

int run_fetch(const CLI::App& cmd, FetchOptions& opt) {
    json config = load_config_file(opt.config_path);
    apply_config(cmd, "--base-url", config, "registry_base_url", opt.base_url);
    apply_config(cmd, "--device", config, "device", opt.device);
    apply_config(cmd, "--field", config, "field", opt.field);
    apply_config(cmd, "--recency", config, "recency", opt.recency);
    apply_config(cmd, "--reference-date", config, "reference_date", opt.reference_date);
    apply_config(cmd, "--page-size", config, "page_size", opt.page_size);
    apply_config(cmd, "--max", config, "max_records", opt.max_records);
    if (opt.device.empty()) opt.device = opt.query;

    Date reference = Date{2026, 1, 1};
    if (!opt.reference_date.empty()) {
        auto parsed = Date::parse(opt.reference_date);
        if (!parsed) {
            std::cerr << "error: bad --reference-date, expected YYYY-MM-DD\n";
            return kExitUsage;
        }
        reference = *parsed;
    }
    std::optional<RecencyClass> wanted;
    if (!opt.recency.empty()) {
        wanted = recency_from_string(opt.recency);
        if (!wanted) {
            std::cerr << "error: unknown --recency class: " << opt.recency << "\n";
            return kExitUsage;
        }
    }

    RegistryClient client(opt.base_url);
    client.set_warning_handler([](const std::string& w) { std::cerr << "warning: " << w << "\n"; });
    Query query;
    query.search_expression = opt.query;
    query.page_size = opt.page_size;
    std::vector<Trial> fetched = client.fetch_all(query, opt.max_records);

    Corpus corpus;
    corpus.device = opt.device;
    corpus.field = MedicalField::from_name(opt.field);
    if (wanted) corpus.recency = *wanted;
    for (auto& t : fetched) t.field_labels.push_back(corpus.field);

    FilterAttrition attrition;
    std::vector<Trial> kept = opt.keep_all
                                  ? fetched
                                  : filter_trials_with_attrition(fetched, reference, attrition);
    std::size_t out_of_window = 0;
    std::size_t undated = 0;
    if (wanted && !opt.keep_all) {
        std::vector<Trial> in_window;
        for (const auto& t : kept) {
            try {
                if (classify_recency(t, reference) == *wanted) {
                    in_window.push_back(t);
                } else {
                    ++out_of_window;
                }
            } catch (const MissingDate&) {
                ++undated;
            }
        }
        kept = std::move(in_window);
    }
    corpus.trials = std::move(kept);
    save_corpus(corpus, opt.out_path);

    std::cout << "fetched " << fetched.size() << " trials from " << opt.base_url << "\n";
    if (!opt.keep_all) {
        std::cout << "  dropped withdrawn:        " << attrition.withdrawn << "\n";
        std::cout << "  dropped enrollment < 50:  " << attrition.under_enrolled << "\n";
        std::cout << "  dropped missing summary:  " << attrition.missing_summary << "\n";
        if (wanted) {
            std::cout << "  dropped out of window:    " << out_of_window << "\n";
            std::cout << "  dropped missing dates:    " << undated << "\n";
        }
    }
    std::cout << "wrote " << corpus.trials.size() << " trials to " << opt.out_path << "\n";
    return kExitOk;
}

struct SummarizeOptions {
    std::string corpus_path;
    std::string backend = "mock";
    std::string out_prefix = "run";
    std::string config_path;
    std::string cache_dir;
    std::string model_id = "gpt-3.5-turbo";
    std::string endpoint = "https://api.openai.com";
    std::string api_key_env = "TRIALDIGEST_API_KEY";
    std::string map_template_file;
    std::string reduce_template_file;
    double temperature = 0.0;
    int concurrency = 4;
    int batch_size = 15;
    int words_per_trial = 13;
    int full_batch_words = 200;
    int combine_min = 150;
    int combine_max = 250;
    int token_limit = 4096;
    bool reprompt = false;
};

int run_summarize(const CLI::App& cmd, SummarizeOptions& opt) {
    json config = load_config_file(opt.config_path);
    apply_config(cmd, "--backend", config, "backend", opt.backend);
    apply_config(cmd, "--cache-dir", config, "cache_dir", opt.cache_dir);
    apply_config(cmd, "--model", config, "model_id", opt.model_id);
    apply_config(cmd, "--endpoint", config, "endpoint", opt.endpoint);
    apply_config(cmd, "--api-key-env", config, "api_key_env", opt.api_key_env);
    apply_config(cmd, "--temperature", config, "temperature", opt.temperature);
    apply_config(cmd, "--concurrency", config, "concurrency_limit", opt.concurrency);
    apply_config(cmd, "--batch-size", config, "batch_size", opt.batch_size);
    apply_config(cmd, "--words-per-trial", config, "words_per_trial", opt.words_per_trial);
    apply_config(cmd, "--full-batch-words", config, "full_batch_words", opt.full_batch_words);
    apply_config(cmd, "--combine-min", config, "combine_min_words", opt.combine_min);
    apply_config(cmd, "--combine-max", config, "combine_max_words", opt.combine_max);
    apply_config(cmd, "--token-limit", config, "token_limit", opt.token_limit);
    apply_config(cmd, "--map-template", config, "map_template_file", opt.map_template_file);
    apply_config(cmd, "--reduce-template", config, "reduce_template_file", opt.reduce_template_file);

    if (opt.backend != "mock" && opt.backend != "http") {
        std::cerr << "error: --backend must be mock or http\n";
        return kExitUsage;
    }

    PipelineConfig pipeline_config;
    pipeline_config.policy.batch_size = opt.batch_size;
    pipeline_config.policy.words_per_trial = opt.words_per_trial;
    pipeline_config.policy.full_batch_words = opt.full_batch_words;
    pipeline_config.policy.combine_min_words = opt.combine_min;
    pipeline_config.policy.combine_max_words = opt.combine_max;
    pipeline_config.policy.token_limit = opt.token_limit;
    pipeline_config.model_id = opt.model_id;
    pipeline_config.temperature = opt.temperature;
    pipeline_config.concurrency_limit = opt.concurrency;
    pipeline_config.cache_dir = opt.cache_dir;
    pipeline_config.reprompt_on_range_violation = opt.reprompt;
    if (!opt.map_template_file.empty()) {
        pipeline_config.templates.map_template = PromptTemplates::load_file(opt.map_template_file);
    }
    if (!opt.reduce_template_file.empty()) {
        pipeline_config.templates.reduce_template =
            PromptTemplates::load_file(opt.reduce_template_file);
    }

    std::unique_ptr<CompletionBackend> backend;
    if (opt.backend == "mock") {
        backend = std::make_unique<MockBackend>();
    } else {
        if (credential_from_env(opt.api_key_env).empty()) {
            std::cerr << "error: http backend needs credential in $" << opt.api_key_env << "\n";
            return kExitUsage;
        }
        HttpBackendConfig http;
        http.base_url = opt.endpoint;
        http.api_key_env = opt.api_key_env;
        http.token_limit = opt.token_limit;
        backend = std::make_unique<HttpBackend>(http);
    }

    Corpus corpus = load_corpus(opt.corpus_path);
    RunRecord record = summarize_corpus(corpus, pipeline_config, *backend);

    write_text_file(opt.out_prefix + ".txt", final_document(record));
    write_text_file(opt.out_prefix + ".json", run_record_json(record).dump(2) + "\n");

    ValidationReport report = validate(record.final.text, corpus.size());
    std::cout << "llm calls: " << record.llm_call_count
              << " (cache hits: " << record.cache_hits << ")\n";
    std::cout << "final summary: " << record.final.words << " words, "
              << report.unique_indices.size() << "/" << corpus.size()
              << " trials cited (coverage " << report.coverage_fraction << ")\n";
    std::cout << "hallucination events: " << record.hallucination_events.size() << "\n";
    for (const auto& e : record.hallucination_events) {
        std::cout << "  " << e.detail << "\n";
    }
    for (const auto& d : record.deviations) {
        std::cout << "deviation: " << d << "\n";
    }
    std::cout << "wrote " << opt.out_prefix << ".txt and " << opt.out_prefix << ".json\n";
    return kExitOk;
}

struct MetricsOptions {
    std::vector<std::string> summary_paths;
    std::vector<long> corpus_sizes;
    std::string corpus_path;
    std::string baseline_corpus_path;
    std::string out_path;
    std::string config_path;
    std::vector<std::string> rouge_files;
    bool pooled = false;
};

int run_metrics(const CLI::App& cmd, MetricsOptions& opt) {
    json config = load_config_file(opt.config_path);
    apply_config(cmd, "--corpus", config, "corpus", opt.corpus_path);
    apply_config(cmd, "--baseline", config, "baseline_corpus", opt.baseline_corpus_path);

    if (!opt.rouge_files.empty()) {
        std::string reference = read_text_file(opt.rouge_files[0]);
        std::string candidate = read_text_file(opt.rouge_files[1]);
        double score = rouge_l_f1_text(reference, candidate);
        std::cout << "rouge_l_f1: " << score << "\n";
        return kExitOk;
    }
    if (opt.summary_paths.empty()) {
        std::cerr << "error: need at least one --summary (or --rouge REF CAND)\n";
        return kExitUsage;
    }

    std::optional<std::size_t> shared_size;
    if (!opt.corpus_path.empty()) {
        shared_size = load_corpus(opt.corpus_path).size();
    }

    std::vector<SummaryMetrics> rows;
    std::vector<std::optional<std::size_t>> row_sizes;
    for (std::size_t i = 0; i < opt.summary_paths.size(); ++i) {
        std::string text = read_text_file(opt.summary_paths[i]);
        // strip an appended reference list so only the summary is measured
        if (auto pos = text.find("\n\nReferences:\n"); pos != std::string::npos) {
            text.resize(pos);
        }
        std::optional<std::size_t> size = shared_size;
        if (i < opt.corpus_sizes.size()) size = static_cast<std::size_t>(opt.corpus_sizes[i]);
        else if (!opt.corpus_sizes.empty()) size = static_cast<std::size_t>(opt.corpus_sizes[0]);
        rows.push_back(summary_metrics(text, size, opt.summary_paths[i]));
        row_sizes.push_back(size);
    }

    std::optional<TTestResult> readability;
    if (!opt.baseline_corpus_path.empty()) {
        Corpus baseline = load_corpus(opt.baseline_corpus_path);
        std::vector<double> raw_smog;
        for (const auto& t : baseline.trials) {
            if (!t.brief_summary.empty()) {
                raw_smog.push_back(smog(t.title + ". " + t.brief_summary));
            }
        }
        std::vector<double> summary_smog;
        for (const auto& m : rows) summary_smog.push_back(m.smog_grade);
        if (raw_smog.size() >= 2 && summary_smog.size() >= 2) {
            SummaryStats a = summarize_distribution(raw_smog);
            SummaryStats b = summarize_distribution(summary_smog);
            readability = opt.pooled
                              ? pooled_t_test(a.mean, a.stddev, static_cast<long>(a.n), b.mean,
                                              b.stddev, static_cast<long>(b.n))
                              : welch_t_test(a.mean, a.stddev, static_cast<long>(a.n), b.mean,
                                             b.stddev, static_cast<long>(b.n));
        }
    }

    std::optional<RegressionResult> fit;
    {
        // reference-inclusion trend: trials inputted vs unique references cited
        std::vector<std::pair<double, double>> points;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (row_sizes[i]) {
                points.emplace_back(static_cast<double>(*row_sizes[i]),
                                    static_cast<double>(rows[i].unique_references));
            }
        }
        if (points.size() >= 2) {
            try {
                fit = linear_fit(points);
            } catch (const DegenerateInput&) {
                // all runs had the same corpus size; nothing to fit
            }
        }
    }

    json report = metrics_report(rows, readability, fit);
    std::string rendered = report.dump(2) + "\n";
    if (!opt.out_path.empty()) {
        write_text_file(opt.out_path, rendered);
        std::cout << "wrote " << opt.out_path << "\n";
    } else {
        std::cout << rendered;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Batch summarization of clinical-trial registries with referenced output"};
    app.require_subcommand(1);

    FetchOptions fetch;
    CLI::App* fetch_cmd = app.add_subcommand("fetch", "Fetch trials from the registry into a corpus file");
    fetch_cmd->add_option("--query", fetch.query, "Registry search expression")->required();
    fetch_cmd->add_option("--out", fetch.out_path, "Corpus output path")->required();
    fetch_cmd->add_option("--config", fetch.config_path, "JSON config file");
    fetch_cmd->add_option("--base-url", fetch.base_url, "Registry base URL");
    fetch_cmd->add_option("--device", fetch.device, "Device name for the corpus header");
    fetch_cmd->add_option("--field", fetch.field, "Medical field label");
    fetch_cmd->add_option("--recency", fetch.recency,
                          "Keep only one class: completed_within_5y | new_within_2y");
    fetch_cmd->add_option("--reference-date", fetch.reference_date, "Recency reference date (YYYY-MM-DD)");
    fetch_cmd->add_option("--page-size", fetch.page_size, "Registry page size")
        ->check(CLI::Range(1, 1000));
    fetch_cmd->add_option("--max", fetch.max_records, "Maximum records to fetch");
    fetch_cmd->add_flag("--keep-all", fetch.keep_all, "Skip the inclusion filters");

    SummarizeOptions summarize;
    CLI::App* summarize_cmd = app.add_subcommand("summarize", "Run the summarization cascade over a corpus");
    summarize_cmd->add_option("--corpus", summarize.corpus_path, "Corpus file")->required();
    summarize_cmd->add_option("--backend", summarize.backend, "mock | http");
    summarize_cmd->add_option("--out-prefix", summarize.out_prefix, "Output prefix for .txt/.json");
    summarize_cmd->add_option("--config", summarize.config_path, "JSON config file");
    summarize_cmd->add_option("--cache-dir", summarize.cache_dir, "Response cache directory");
    summarize_cmd->add_option("--model", summarize.model_id, "Model identifier");
    summarize_cmd->add_option("--endpoint", summarize.endpoint, "Chat-completion endpoint base URL");
    summarize_cmd->add_option("--api-key-env", summarize.api_key_env,
                              "Environment variable holding the API credential");
    summarize_cmd->add_option("--temperature", summarize.temperature, "Sampling temperature");
    summarize_cmd->add_option("--concurrency", summarize.concurrency, "Max in-flight map calls");
    summarize_cmd->add_option("--batch-size", summarize.batch_size, "Trials per batch");
    summarize_cmd->add_option("--words-per-trial", summarize.words_per_trial, "Words per trial for partial batches");
    summarize_cmd->add_option("--full-batch-words", summarize.full_batch_words, "Word budget for full batches");
    summarize_cmd->add_option("--combine-min", summarize.combine_min, "Combine budget lower bound");
    summarize_cmd->add_option("--combine-max", summarize.combine_max, "Combine budget upper bound");
    summarize_cmd->add_option("--token-limit", summarize.token_limit, "Prompt token limit");
    summarize_cmd->add_option("--map-template", summarize.map_template_file, "Map prompt template file");
    summarize_cmd->add_option("--reduce-template", summarize.reduce_template_file, "Combine prompt template file");
    summarize_cmd->add_flag("--reprompt", summarize.reprompt,
                            "Retry the final combine once if the length leaves the requested range");

    MetricsOptions metrics;
    CLI::App* metrics_cmd = app.add_subcommand("metrics", "Evaluate summaries: readability, utilization, statistics");
    metrics_cmd->add_option("--summary", metrics.summary_paths, "Summary text file (repeatable)");
    metrics_cmd->add_option("--corpus-size", metrics.corpus_sizes,
                            "Corpus size per summary (single value broadcasts)");
    metrics_cmd->add_option("--corpus", metrics.corpus_path, "Corpus file to take the size from");
    metrics_cmd->add_option("--baseline", metrics.baseline_corpus_path,
                            "Corpus file for the raw-vs-summary readability t-test");
    metrics_cmd->add_option("--out", metrics.out_path, "Report output path (default stdout)");
    metrics_cmd->add_option("--config", metrics.config_path, "JSON config file");
    metrics_cmd->add_option("--rouge", metrics.rouge_files, "Reference and candidate text files")
        ->expected(2);
    metrics_cmd->add_flag("--pooled", metrics.pooled, "Pooled-variance t-test instead of Welch");

    try {
        app.parse(argc, argv);
        if (fetch_cmd->parsed()) return run_fetch(*fetch_cmd, fetch);
        if (summarize_cmd->parsed()) return run_summarize(*summarize_cmd, summarize);
        if (metrics_cmd->parsed()) return run_metrics(*metrics_cmd, metrics);
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const trialdigest::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
