#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <trialdigest/ingest.hpp>

#include "support/corpus_gen.hpp"

namespace {

namespace fs = std::filesystem;

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path capture = fs::temp_directory_path() /
                       ("trialdigest_cli_out_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++) + ".txt");
    std::string command = std::string(TRIALDIGEST_CLI_PATH) + " " + args + " > " +
                          capture.string() + " 2>&1";
    int status = std::system(command.c_str());
    CliResult result;
    result.exit_code = WEXITSTATUS(status);
    std::ifstream in(capture);
    std::ostringstream ss;
    ss << in.rdbuf();
    result.output = ss.str();
    fs::remove(capture);
    return result;
}

struct WorkDir {
    fs::path path;
    WorkDir() {
        path = fs::temp_directory_path() / ("trialdigest_cli_work_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~WorkDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string fixtures_dir() { return std::string(TRIALDIGEST_TEST_DIR) + "/fixtures"; }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("cli: missing required flag is a usage error") {
    CliResult r = run_cli("fetch --out x.jsonl");
    CHECK(r.exit_code == 2);
    CliResult unknown = run_cli("frobnicate");
    CHECK(unknown.exit_code == 2);
}

TEST_CASE("cli: fetch against a fixture registry writes a corpus and prints attrition") {
    httplib::Server server;
    server.Get("/api/v2/studies", [](const httplib::Request&, httplib::Response& res) {
        std::ifstream in(fixtures_dir() + "/ctgov_studies_page.json", std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        res.set_content(ss.str(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    WorkDir dir;
    std::string out = dir.file("corpus.jsonl");
    CliResult r = run_cli("fetch --query Fitbit --out " + out + " --base-url http://127.0.0.1:" +
                          std::to_string(port) + " --field general_physiology --page-size 3");
    server.stop();
    thread.join();

    INFO(r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("fetched 3 trials") != std::string::npos);
    CHECK(r.output.find("dropped withdrawn") != std::string::npos);
    trialdigest::Corpus corpus = trialdigest::load_corpus(out);
    CHECK(corpus.trials.size() == 3);  // fixture trials all pass the filters
    CHECK(corpus.field.name() == "general_physiology");
}

TEST_CASE("cli: fetch to an unwritable path is a runtime error") {
    CliResult r = run_cli("fetch --query Fitbit --out /nonexistent-dir/x.jsonl --base-url http://127.0.0.1:1");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("error:") != std::string::npos);
}

TEST_CASE("cli: summarize with the mock backend is deterministic and cache-aware") {
    WorkDir dir;
    trialdigest::Corpus corpus = testsupport::synthetic_corpus(39, 77);
    std::string corpus_path = dir.file("corpus.jsonl");
    trialdigest::save_corpus(corpus, corpus_path);

    std::string prefix = dir.file("run");
    std::string cache = dir.file("cache");
    std::string args = "summarize --corpus " + corpus_path + " --backend mock --out-prefix " +
                       prefix + " --cache-dir " + cache;

    CliResult first = run_cli(args);
    INFO(first.output);
    REQUIRE(first.exit_code == 0);
    CHECK(first.output.find("llm calls: 4") != std::string::npos);
    std::string summary_a = read_file(prefix + ".txt");

    CliResult second = run_cli(args);
    REQUIRE(second.exit_code == 0);
    CHECK(second.output.find("llm calls: 0") != std::string::npos);
    CHECK(read_file(prefix + ".txt") == summary_a);

    auto record = nlohmann::json::parse(read_file(prefix + ".json"));
    CHECK(record["cache_hits"] == 4);
    CHECK(record["config"]["model_id"] == "gpt-3.5-turbo");
}

TEST_CASE("cli: http backend without a credential fails before any work") {
    WorkDir dir;
    trialdigest::Corpus corpus = testsupport::synthetic_corpus(5, 78);
    std::string corpus_path = dir.file("corpus.jsonl");
    trialdigest::save_corpus(corpus, corpus_path);
    CliResult r = run_cli("summarize --corpus " + corpus_path +
                          " --backend http --api-key-env TRIALDIGEST_SURELY_UNSET_VAR");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("credential") != std::string::npos);
}

TEST_CASE("cli: config file supplies defaults, flags win") {
    WorkDir dir;
    trialdigest::Corpus corpus = testsupport::synthetic_corpus(16, 79);
    std::string corpus_path = dir.file("corpus.jsonl");
    trialdigest::save_corpus(corpus, corpus_path);
    std::string config_path = dir.file("config.json");
    {
        std::ofstream out(config_path);
        out << R"({"model_id":"config-model","batch_size":8})";
    }
    std::string prefix = dir.file("cfg");
    CliResult r = run_cli("summarize --corpus " + corpus_path + " --backend mock --config " +
                          config_path + " --out-prefix " + prefix + " --batch-size 15");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    auto record = nlohmann::json::parse(read_file(prefix + ".json"));
    CHECK(record["config"]["model_id"] == "config-model");  // from config file
    CHECK(record["config"]["batch_size"] == 15);            // flag overrides config
}

TEST_CASE("cli: metrics over the sample summary fixture") {
    WorkDir dir;
    std::string report_path = dir.file("report.json");
    CliResult r = run_cli("metrics --summary " + fixtures_dir() + "/sample_summary.txt" +
                          " --corpus-size 39 --out " + report_path);
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    auto report = nlohmann::json::parse(read_file(report_path));
    REQUIRE(report["summaries"].size() == 1);
    const auto& row = report["summaries"][0];
    CHECK(row["unique_references"] == 11);
    long words = row["words"].get<long>();
    CHECK(words >= 196);
    CHECK(words <= 206);
    CHECK(row["utilization"].get<double>() == Catch::Approx(11.0 / 39.0).epsilon(1e-9));
}

TEST_CASE("cli: rouge mode on identical and empty inputs") {
    WorkDir dir;
    std::string a = dir.file("a.txt");
    std::string b = dir.file("b.txt");
    {
        std::ofstream out(a);
        out << "The tracker improves outcomes in trials.";
    }
    fs::copy_file(a, b);
    CliResult same = run_cli("metrics --rouge " + a + " " + b);
    REQUIRE(same.exit_code == 0);
    CHECK(same.output.find("rouge_l_f1: 1") != std::string::npos);

    std::string empty = dir.file("empty.txt");
    { std::ofstream out(empty); }
    CliResult bad = run_cli("metrics --rouge " + a + " " + empty);
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("error:") != std::string::npos);
}

TEST_CASE("cli: metrics with baseline corpus adds the readability t-test") {
    WorkDir dir;
    trialdigest::Corpus corpus = trialdigest::load_corpus(fixtures_dir() + "/oncology25.jsonl");
    std::string baseline = dir.file("baseline.jsonl");
    trialdigest::save_corpus(corpus, baseline);

    // two summaries so the summary-side deviation is defined
    std::string s1 = dir.file("s1.txt");
    std::string s2 = dir.file("s2.txt");
    {
        std::ofstream out(s1);
        out << "Wearable monitoring supports oncology rehabilitation programs [1]. "
               "Participants demonstrate measurable cardiovascular improvements [2].";
    }
    {
        std::ofstream out(s2);
        out << "Continuous telemetry informs chemotherapy symptom management [3]. "
               "Investigators quantify adherence trajectories longitudinally [4].";
    }
    CliResult r = run_cli("metrics --summary " + s1 + " --summary " + s2 +
                          " --corpus-size 25 --corpus-size 30 --baseline " + baseline);
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    auto report = nlohmann::json::parse(r.output);
    REQUIRE(report.contains("readability_t_test"));
    CHECK(report["readability_t_test"]["n1"] == 25);
    CHECK(report["readability_t_test"]["n2"] == 2);
    REQUIRE(report.contains("reference_inclusion_fit"));
}
