#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "trialdigest/backend.hpp"
#include "trialdigest/batching.hpp"
#include "trialdigest/hash.hpp"

namespace trialdigest {

struct HttpBackendConfig {
    std::string base_url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    std::string api_key_env = "TRIALDIGEST_API_KEY";
    long token_limit = 4096;
    int timeout_seconds = 120;
    RetryPolicy retry;
};

// Chat-completions-style JSON over HTTP(S). Retries RateLimited and
// TransportError per policy; everything else surfaces immediately.
class HttpBackend : public CompletionBackend {
public:
    explicit HttpBackend(HttpBackendConfig config)
        : config_(std::move(config)), api_key_(credential_from_env(config_.api_key_env)) {}

    std::string id() const override { return "http:" + config_.base_url; }

    CompletionResponse complete(const CompletionRequest& request) override {
        if (estimate_tokens(request.prompt) > config_.token_limit) {
            throw ContextOverflow("prompt estimate exceeds token limit of " +
                                  std::to_string(config_.token_limit));
        }
        std::uint32_t salt = static_cast<std::uint32_t>(fnv1a64(request.prompt));
        return with_retries(
            config_.retry, salt, [&] { return attempt(request); },
            [](const Error& e) {
                return dynamic_cast<const RateLimited*>(&e) != nullptr ||
                       dynamic_cast<const TransportError*>(&e) != nullptr;
            });
    }

private:
    CompletionResponse attempt(const CompletionRequest& request) const {
        nlohmann::json body = {
            {"model", request.model_id},
            {"messages", {{{"role", "user"}, {"content", request.prompt}}}},
            {"temperature", request.temperature},
        };
        if (request.max_output_tokens > 0) body["max_tokens"] = request.max_output_tokens;

        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout_seconds);
        client.set_read_timeout(config_.timeout_seconds);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        auto start = std::chrono::steady_clock::now();
        httplib::Result res = client.Post(config_.path, headers, body.dump(), "application/json");
        auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);

        if (!res) {
            throw TransportError("request failed: " + httplib::to_string(res.error()));
        }
        if (res->status == 401 || res->status == 403) {
            throw AuthError("backend rejected credential (HTTP " +
                            std::to_string(res->status) + ")");
        }
        if (res->status == 429) {
            long wait_ms = 1000;
            if (res->has_header("Retry-After")) {
                wait_ms = std::strtol(res->get_header_value("Retry-After").c_str(), nullptr, 10) *
                          1000;
            }
            throw RateLimited(std::chrono::milliseconds(wait_ms));
        }
        if (res->status / 100 != 2) {
            if (res->body.find("context_length") != std::string::npos ||
                res->body.find("maximum context") != std::string::npos) {
                throw ContextOverflow("backend reports prompt too long");
            }
            throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body);
        }

        nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) throw MalformedResponse("response is not valid JSON");
        if (!parsed.contains("choices") || parsed["choices"].empty() ||
            !parsed["choices"][0].contains("message") ||
            !parsed["choices"][0]["message"].contains("content")) {
            throw MalformedResponse("response lacks choices[0].message.content");
        }
        CompletionResponse out;
        out.text = parsed["choices"][0]["message"]["content"].get<std::string>();
        if (out.text.empty()) throw MalformedResponse("backend returned empty completion");
        out.backend_id = id();
        out.latency = latency;
        if (parsed.contains("usage")) {
            out.input_tokens = parsed["usage"].value("prompt_tokens", 0L);
            out.output_tokens = parsed["usage"].value("completion_tokens", 0L);
        } else {
            out.input_tokens = estimate_tokens(request.prompt);
            out.output_tokens = estimate_tokens(out.text);
        }
        return out;
    }

    HttpBackendConfig config_;
    std::string api_key_;
};

} // namespace trialdigest
