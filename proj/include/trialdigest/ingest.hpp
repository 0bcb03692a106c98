#pragma once

#include <fstream>
#include <functional>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_set>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "trialdigest/backend.hpp"
#include "trialdigest/error.hpp"
#include "trialdigest/hash.hpp"
#include "trialdigest/trial.hpp"

namespace trialdigest {

class NetworkError : public Error {
public:
    explicit NetworkError(const std::string& what) : Error(what) {}
};

class ApiError : public Error {
public:
    ApiError(int status_code, std::string response_body)
        : Error("registry returned HTTP " + std::to_string(status_code)),
          status(status_code),
          body(std::move(response_body)) {}
    int status;
    std::string body;
};

class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& what) : Error(what) {}
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_number(line) {}
    std::size_t line_number;
};

struct Query {
    std::string search_expression;
    int page_size = 100;
    std::optional<std::string> page_token;

    void check() const {
        if (search_expression.empty()) throw InvariantViolation("empty search expression");
        if (page_size < 1 || page_size > 1000) {
            throw InvariantViolation("page_size must be in [1, 1000]");
        }
    }
};

struct StudyPage {
    std::vector<Trial> trials;
    std::optional<std::string> next_page_token;
    std::optional<long> total_count;
};

namespace detail {

inline std::optional<Date> date_from_struct(const nlohmann::json& module, const char* key) {
    if (!module.contains(key) || !module[key].contains("date")) return std::nullopt;
    return Date::parse(module[key]["date"].get<std::string>());
}

inline TrialStatus map_registry_status(std::string_view raw) {
    std::string s;
    for (char c : raw) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "recruiting") return TrialStatus::recruiting;
    if (s == "active_not_recruiting" || s == "active") return TrialStatus::active;
    if (s == "completed") return TrialStatus::completed;
    if (s == "withdrawn") return TrialStatus::withdrawn;
    return TrialStatus::other;
}

// Maps one registry study record (API v2 shape) onto a Trial. Only the
// fields the pipeline consumes are read; missing optionals stay absent.
inline Trial trial_from_study_json(const nlohmann::json& study) {
    const auto& protocol = study.contains("protocolSection") ? study["protocolSection"] : study;
    Trial t;
    if (protocol.contains("identificationModule") &&
        protocol["identificationModule"].contains("nctId")) {
        t.id = protocol["identificationModule"]["nctId"].get<std::string>();
    }
    if (t.id.empty()) throw SchemaError("study record has no registry id");
    if (protocol.contains("identificationModule")) {
        t.title = protocol["identificationModule"].value("briefTitle", "");
    }
    if (protocol.contains("descriptionModule")) {
        t.brief_summary = protocol["descriptionModule"].value("briefSummary", "");
    }
    t.summary_missing = t.brief_summary.empty();
    if (protocol.contains("statusModule")) {
        const auto& status = protocol["statusModule"];
        std::string raw = status.value("overallStatus", "");
        t.status = map_registry_status(raw);
        if (t.status == TrialStatus::other) t.status_raw = raw;
        t.start_date = date_from_struct(status, "startDateStruct");
        t.completion_date = date_from_struct(status, "primaryCompletionDateStruct");
        if (!t.completion_date) t.completion_date = date_from_struct(status, "completionDateStruct");
    }
    if (protocol.contains("designModule") && protocol["designModule"].contains("enrollmentInfo")) {
        t.enrollment = protocol["designModule"]["enrollmentInfo"].value("count", 0L);
        if (t.enrollment < 0) t.enrollment = 0;
    }
    if (protocol.contains("conditionsModule") &&
        protocol["conditionsModule"].contains("conditions")) {
        for (const auto& c : protocol["conditionsModule"]["conditions"]) {
            t.conditions.push_back(c.get<std::string>());
        }
    }
    return t;
}

} // namespace detail

// ClinicalTrials.gov v2 client. At most two requests are in flight at any
// time; transient failures (transport, HTTP 429/5xx) retry with backoff.
class RegistryClient {
public:
    explicit RegistryClient(std::string base_url = "https://clinicaltrials.gov",
                            RetryPolicy retry = {})
        : base_url_(std::move(base_url)), retry_(retry) {}

    void set_warning_handler(std::function<void(const std::string&)> handler) {
        warn_ = std::move(handler);
    }

    StudyPage fetch_page(const Query& query) {
        query.check();
        std::uint32_t salt = static_cast<std::uint32_t>(fnv1a64(query.search_expression));
        return with_retries(
            retry_, salt, [&] { return fetch_page_once(query); },
            [](const Error& e) {
                if (dynamic_cast<const NetworkError*>(&e)) return true;
                if (auto* api = dynamic_cast<const ApiError*>(&e)) {
                    return api->status == 429 || api->status / 100 == 5;
                }
                return false;
            });
    }

    std::vector<Trial> fetch_all(const Query& query, long max_records) {
        if (max_records < 1) throw InvariantViolation("max_records must be >= 1");
        std::vector<Trial> out;
        std::unordered_set<std::string> seen;
        Query q = query;
        q.page_token.reset();
        while (true) {
            StudyPage page = fetch_page(q);
            for (auto& trial : page.trials) {
                if (!seen.insert(trial.id).second) {
                    warn("duplicate trial id across pages, dropped: " + trial.id);
                    continue;
                }
                out.push_back(std::move(trial));
                if (static_cast<long>(out.size()) >= max_records) return out;
            }
            if (!page.next_page_token) break;
            q.page_token = page.next_page_token;
        }
        return out;
    }

private:
    StudyPage fetch_page_once(const Query& query) {
        inflight_.acquire();
        struct Release {
            std::counting_semaphore<2>& sem;
            ~Release() { sem.release(); }
        } release{inflight_};

        httplib::Client client(base_url_);
        client.set_connection_timeout(30);
        client.set_read_timeout(60);
        httplib::Params params{
            {"query.term", query.search_expression},
            {"pageSize", std::to_string(query.page_size)},
            {"countTotal", "true"},
        };
        if (query.page_token) params.emplace("pageToken", *query.page_token);
        httplib::Result res = client.Get("/api/v2/studies", params, httplib::Headers{});
        if (!res) throw NetworkError("registry unreachable: " + httplib::to_string(res.error()));
        if (res->status / 100 != 2) throw ApiError(res->status, res->body);

        nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) throw SchemaError("registry response is not valid JSON");
        StudyPage page;
        if (parsed.contains("studies")) {
            for (const auto& study : parsed["studies"]) {
                page.trials.push_back(detail::trial_from_study_json(study));
            }
        }
        if (parsed.contains("nextPageToken")) {
            page.next_page_token = parsed["nextPageToken"].get<std::string>();
        }
        if (parsed.contains("totalCount")) page.total_count = parsed["totalCount"].get<long>();
        return page;
    }

    void warn(const std::string& message) {
        if (warn_) warn_(message);
    }

    std::string base_url_;
    RetryPolicy retry_;
    std::counting_semaphore<2> inflight_{2};
    std::function<void(const std::string&)> warn_;
};

namespace detail {

inline nlohmann::json field_to_json(const MedicalField& f) {
    return {{"name", f.name()}, {"standard", f.is_standard()}};
}

inline MedicalField field_from_json(const nlohmann::json& j) {
    return MedicalField::from_name(j.at("name").get<std::string>());
}

inline nlohmann::json trial_to_json(const Trial& t) {
    nlohmann::json j;
    j["id"] = t.id;
    j["title"] = t.title;
    j["brief_summary"] = t.brief_summary;
    j["status"] = std::string(to_string(t.status));
    if (!t.status_raw.empty()) j["status_raw"] = t.status_raw;
    j["enrollment"] = t.enrollment;
    if (t.start_date) j["start_date"] = t.start_date->to_string();
    if (t.completion_date) j["completion_date"] = t.completion_date->to_string();
    j["conditions"] = t.conditions;
    nlohmann::json fields = nlohmann::json::array();
    for (const auto& f : t.field_labels) fields.push_back(field_to_json(f));
    j["field_labels"] = fields;
    if (t.summary_missing) j["summary_missing"] = true;
    if (t.summary_truncated) j["summary_truncated"] = true;
    return j;
}

inline Trial trial_from_json(const nlohmann::json& j) {
    Trial t;
    t.id = j.at("id").get<std::string>();
    t.title = j.value("title", "");
    t.brief_summary = j.value("brief_summary", "");
    t.status = trial_status_from_string(j.value("status", "other"));
    t.status_raw = j.value("status_raw", "");
    t.enrollment = j.value("enrollment", 0L);
    if (j.contains("start_date")) t.start_date = Date::parse(j["start_date"].get<std::string>());
    if (j.contains("completion_date")) {
        t.completion_date = Date::parse(j["completion_date"].get<std::string>());
    }
    if (j.contains("conditions")) {
        t.conditions = j["conditions"].get<std::vector<std::string>>();
    }
    if (j.contains("field_labels")) {
        for (const auto& f : j["field_labels"]) t.field_labels.push_back(field_from_json(f));
    }
    t.summary_missing = j.value("summary_missing", false);
    t.summary_truncated = j.value("summary_truncated", false);
    return t;
}

} // namespace detail

inline constexpr const char* kCorpusSchema = "trialdigest.corpus/1";

// Line-delimited JSON: a header record with corpus metadata, then one
// trial per line.
inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write corpus file: " + path);
    nlohmann::json header;
    header["schema"] = kCorpusSchema;
    header["device"] = corpus.device;
    header["field"] = detail::field_to_json(corpus.field);
    header["recency"] = std::string(to_string(corpus.recency));
    header["trial_count"] = corpus.trials.size();
    out << header.dump() << "\n";
    for (const auto& t : corpus.trials) {
        out << detail::trial_to_json(t).dump() << "\n";
    }
    if (!out) throw IoError("short write to corpus file: " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus file: " + path);
    Corpus corpus;
    std::string line;
    std::size_t line_number = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError(line_number, "malformed JSON");
        try {
            if (!saw_header) {
                if (j.value("schema", "") != kCorpusSchema) {
                    throw ParseError(line_number, "missing or unknown corpus header");
                }
                corpus.device = j.value("device", "");
                if (j.contains("field")) corpus.field = detail::field_from_json(j["field"]);
                if (auto r = recency_from_string(j.value("recency", ""))) corpus.recency = *r;
                saw_header = true;
            } else {
                corpus.trials.push_back(detail::trial_from_json(j));
            }
        } catch (const ParseError&) {
            throw;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_number, e.what());
        }
    }
    if (!saw_header) throw ParseError(1, "empty corpus file");
    corpus.check_unique_ids();
    return corpus;
}

} // namespace trialdigest
