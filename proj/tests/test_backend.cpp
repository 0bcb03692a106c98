#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <trialdigest/backend.hpp>
#include <trialdigest/http_backend.hpp>
#include <trialdigest/prompting.hpp>

using namespace trialdigest;

namespace {

Batch tiny_batch() {
    Batch b;
    const char* summaries[] = {
        "Improves sleep quality in adults. Secondary outcomes cover mood.",
        "Reduces sedentary time at work. Participants receive hourly alerts.",
        "Supports cardiac rehabilitation at home. Adherence is tracked weekly.",
    };
    for (int i = 0; i < 3; ++i) {
        Trial t;
        t.id = "NCT0000000" + std::to_string(i + 1);
        t.title = "Trial " + std::to_string(i + 1);
        t.brief_summary = summaries[i];
        b.trials.push_back(std::move(t));
    }
    return b;
}

std::string tiny_map_prompt(int budget = 39) {
    MapPromptInput input;
    input.device = "Fitbit";
    input.field_name = "somnology";
    input.batch = tiny_batch();
    input.budget_words = budget;
    return render_map_prompt(input);
}

std::set<int> cited(const std::string& text) {
    std::set<int> out;
    for_each_citation_token(text, [&](int idx, std::size_t, std::size_t) { out.insert(idx); });
    return out;
}

} // namespace

TEST_CASE("mock completion is deterministic") {
    MockBackend backend;
    CompletionRequest request{"gpt-3.5-turbo", tiny_map_prompt(), 0.0, 100};
    CHECK(backend.complete(request).text == backend.complete(request).text);
}

TEST_CASE("mock map output cites each trial and respects the budget") {
    std::string out = mock_complete(tiny_map_prompt(39));
    CHECK(cited(out) == std::set<int>{1, 2, 3});
    CHECK(word_count(out) <= 39);
    // one extracted first sentence per trial, each ending in its marker
    CHECK(out.find("Improves sleep quality in adults. [1]") != std::string::npos);
    CHECK(out.find("Reduces sedentary time at work. [2]") != std::string::npos);
    CHECK(out.find("Supports cardiac rehabilitation at home. [3]") != std::string::npos);
}

TEST_CASE("mock reduce output never invents citations") {
    ReducePromptInput input;
    input.device = "Fitbit";
    input.field_name = "general physiology";
    input.intermediate_summaries = {"Sleep improves with feedback [1].",
                                    "Recovery programs scale remotely [16]."};
    input.reference_list = render_reference_block({{1, "A"}, {16, "B"}});
    input.min_words = 150;
    input.max_words = 250;
    std::string out = mock_complete(render_reduce_prompt(input));
    std::set<int> indices = cited(out);
    CHECK(!indices.empty());
    for (int idx : indices) CHECK((idx == 1 || idx == 16));
}

TEST_CASE("mock hard-truncates when the budget is below the first sentence") {
    Batch b = tiny_batch();
    b.trials.resize(1);
    b.trials[0].brief_summary =
        "This very long opening sentence easily exceeds the smallest budgets by a wide margin. "
        "Second sentence.";
    MapPromptInput input;
    input.device = "Fitbit";
    input.field_name = "somnology";
    input.batch = b;
    input.budget_words = 13;
    std::string out = mock_complete(render_map_prompt(input));
    CHECK(word_count(out) <= 13);
    CHECK(cited(out) == std::set<int>{1});
}

TEST_CASE("mock cites at least half the trials under a tight budget") {
    Batch b;
    for (int i = 1; i <= 10; ++i) {
        Trial t;
        t.id = "NCT" + std::to_string(i);
        t.title = "T" + std::to_string(i);
        t.brief_summary =
            "A deliberately wordy first sentence that uses up many words of budget every time. x.";
        b.trials.push_back(std::move(t));
    }
    MapPromptInput input;
    input.device = "Fitbit";
    input.field_name = "oncology";
    input.batch = b;
    input.budget_words = 20;
    std::string out = mock_complete(render_map_prompt(input));
    CHECK(cited(out).size() >= 5);  // ceil(10 / 2)
}

TEST_CASE("unparseable prompts are rejected") {
    CHECK_THROWS_AS(mock_complete("no budget, no fences"), UnparseablePrompt);
    CHECK_THROWS_AS(mock_complete("Write a 200 word thesis but no fence follows"),
                    UnparseablePrompt);
}

TEST_CASE("a summary mentioning the map label does not derail reduce parsing") {
    ReducePromptInput input;
    input.device = "Fitbit";
    input.field_name = "oncology";
    input.intermediate_summaries = {"Trials: the word appears here [3].",
                                    "Another overview sentence [7]."};
    input.reference_list = render_reference_block({{3, "A"}, {7, "B"}});
    input.min_words = 150;
    input.max_words = 250;
    std::string out = mock_complete(render_reduce_prompt(input));
    CHECK(cited(out) == std::set<int>{3, 7});
}

TEST_CASE("budget phrasing inside payload text is ignored") {
    Batch b;
    Trial t;
    t.id = "NCT1";
    t.title = "Journaling Study";
    t.brief_summary =
        "Participants Write a 500 word diary entry every night before sleep. "
        "Telemetry captures adherence.";
    b.trials.push_back(t);
    MapPromptInput input;
    input.device = "Fitbit";
    input.field_name = "psychiatry";
    input.batch = b;
    input.budget_words = 13;
    std::string out = mock_complete(render_map_prompt(input));
    CHECK(word_count(out) <= 13);  // 13 from the template, not 500 from the payload

    ReducePromptInput reduce;
    reduce.device = "Fitbit";
    reduce.field_name = "psychiatry";
    reduce.intermediate_summaries = {"Write a 999 word anything [2].", "Sleep improves [5]."};
    reduce.reference_list = render_reference_block({{2, "A"}, {5, "B"}});
    reduce.min_words = 150;
    reduce.max_words = 250;
    std::string combined = mock_complete(render_reduce_prompt(reduce));
    CHECK(cited(combined) == std::set<int>{2, 5});  // packed to 250, not to 999
}

namespace {

struct LocalServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};

    explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server.Post("/v1/chat/completions",
                    [this, handler](const httplib::Request& req, httplib::Response& res) {
                        hits.fetch_add(1);
                        handler(req, res);
                    });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~LocalServer() {
        server.stop();
        thread.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

HttpBackendConfig config_for(const LocalServer& server) {
    HttpBackendConfig config;
    config.base_url = server.url();
    config.api_key_env = "TRIALDIGEST_TEST_KEY";
    config.retry.max_attempts = 3;
    config.retry.base_delay = std::chrono::milliseconds(1);
    config.retry.max_delay = std::chrono::milliseconds(2);
    return config;
}

} // namespace

TEST_CASE("http backend sends temperature zero and returns the completion") {
    nlohmann::json captured;
    LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
        captured = nlohmann::json::parse(req.body);
        nlohmann::json reply = {
            {"choices", {{{"message", {{"content", "A fine summary [1]."}}}}}},
            {"usage", {{"prompt_tokens", 42}, {"completion_tokens", 7}}},
        };
        res.set_content(reply.dump(), "application/json");
    });
    setenv("TRIALDIGEST_TEST_KEY", "secret-token", 1);
    HttpBackend backend(config_for(server));
    CompletionRequest request{"gpt-3.5-turbo", "Summarize these trials.", 0.0, 64};
    CompletionResponse response = backend.complete(request);
    CHECK(response.text == "A fine summary [1].");
    CHECK(response.input_tokens == 42);
    CHECK(response.output_tokens == 7);
    CHECK(captured["temperature"].get<double>() == 0.0);
    CHECK(captured["model"] == "gpt-3.5-turbo");
    CHECK(captured["messages"][0]["content"] == "Summarize these trials.");
    CHECK(captured["messages"][0]["role"] == "user");
    CHECK(captured["max_tokens"] == 64);
}

TEST_CASE("http 401 maps to AuthError without retries") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.status = 401;
        res.set_content("{\"error\":{\"message\":\"bad key\"}}", "application/json");
    });
    HttpBackend backend(config_for(server));
    CHECK_THROWS_AS(backend.complete({"m", "p", 0.0, 8}), AuthError);
    CHECK(server.hits.load() == 1);
}

TEST_CASE("http 429 retries and then succeeds") {
    std::atomic<int> calls{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        if (calls.fetch_add(1) == 0) {
            res.status = 429;
            res.set_header("Retry-After", "0");
            res.set_content("slow down", "text/plain");
        } else {
            res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
        }
    });
    HttpBackend backend(config_for(server));
    CHECK(backend.complete({"m", "p", 0.0, 8}).text == "ok");
    CHECK(server.hits.load() == 2);
}

TEST_CASE("persistent 5xx exhausts retries as TransportError") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
        res.set_content("maintenance", "text/plain");
    });
    HttpBackend backend(config_for(server));
    CHECK_THROWS_AS(backend.complete({"m", "p", 0.0, 8}), TransportError);
    CHECK(server.hits.load() == 3);  // max_attempts
}

TEST_CASE("malformed response body is surfaced") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "application/json");
    });
    HttpBackend backend(config_for(server));
    CHECK_THROWS_AS(backend.complete({"m", "p", 0.0, 8}), MalformedResponse);
}

TEST_CASE("oversize prompts fail before any network call") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
    });
    HttpBackendConfig config = config_for(server);
    config.token_limit = 10;
    HttpBackend backend(config);
    CompletionRequest request{"m", std::string(1000, 'x'), 0.0, 8};
    CHECK_THROWS_AS(backend.complete(request), ContextOverflow);
    CHECK(server.hits.load() == 0);
}

TEST_CASE("unreachable endpoint maps to TransportError") {
    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:1";  // nothing listens there
    config.retry.max_attempts = 1;
    HttpBackend backend(config);
    CHECK_THROWS_AS(backend.complete({"m", "p", 0.0, 8}), TransportError);
}
