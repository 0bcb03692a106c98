#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "trialdigest/date.hpp"
#include "trialdigest/error.hpp"

namespace trialdigest {

enum class TrialStatus { recruiting, active, completed, withdrawn, other };

inline std::string_view to_string(TrialStatus s) {
    switch (s) {
        case TrialStatus::recruiting: return "recruiting";
        case TrialStatus::active: return "active";
        case TrialStatus::completed: return "completed";
        case TrialStatus::withdrawn: return "withdrawn";
        case TrialStatus::other: return "other";
    }
    return "other";
}

inline TrialStatus trial_status_from_string(std::string_view s) {
    if (s == "recruiting") return TrialStatus::recruiting;
    if (s == "active") return TrialStatus::active;
    if (s == "completed") return TrialStatus::completed;
    if (s == "withdrawn") return TrialStatus::withdrawn;
    return TrialStatus::other;
}

// A medical field label. The fourteen standard fields are a closed list;
// any other name is kept as a custom field under its normalized form,
// never folded into "other".
class MedicalField {
public:
    MedicalField() : name_("other"), standard_(true) {}

    static const std::array<std::string_view, 14>& standard_fields() {
        static const std::array<std::string_view, 14> fields = {
            "somnology",        "gynecology",   "obstetrics",  "cardiology",
            "general_physiology", "endocrinology", "bariatrics",  "psychiatry",
            "oncology",         "gastroenterology", "pulmonology", "chronic_pain",
            "nephrology",       "other",
        };
        return fields;
    }

    static std::string normalize(std::string_view raw) {
        std::string out;
        out.reserve(raw.size());
        bool pending_sep = false;
        for (char c : raw) {
            unsigned char uc = static_cast<unsigned char>(c);
            if (std::isalnum(uc)) {
                if (pending_sep && !out.empty()) out.push_back('_');
                pending_sep = false;
                out.push_back(static_cast<char>(std::tolower(uc)));
            } else {
                pending_sep = true;
            }
        }
        return out;
    }

    static MedicalField from_name(std::string_view raw) {
        std::string norm = normalize(raw);
        // registry-style spelling of the chronic pain field
        if (norm == "chronic_pain_diseases") norm = "chronic_pain";
        const auto& fields = standard_fields();
        bool standard = std::find(fields.begin(), fields.end(), norm) != fields.end();
        MedicalField f;
        f.name_ = std::move(norm);
        f.standard_ = standard;
        return f;
    }

    const std::string& name() const { return name_; }
    bool is_standard() const { return standard_; }

    bool operator==(const MedicalField& o) const { return name_ == o.name_; }

private:
    std::string name_;
    bool standard_;
};

enum class RecencyClass { completed_within_5y, new_within_2y, out_of_window };

inline std::string_view to_string(RecencyClass r) {
    switch (r) {
        case RecencyClass::completed_within_5y: return "completed_within_5y";
        case RecencyClass::new_within_2y: return "new_within_2y";
        case RecencyClass::out_of_window: return "out_of_window";
    }
    return "out_of_window";
}

inline std::optional<RecencyClass> recency_from_string(std::string_view s) {
    if (s == "completed_within_5y") return RecencyClass::completed_within_5y;
    if (s == "new_within_2y") return RecencyClass::new_within_2y;
    if (s == "out_of_window") return RecencyClass::out_of_window;
    return std::nullopt;
}

// One registry record.
struct Trial {
    std::string id;            // registry identifier, e.g. NCT number
    std::string title;
    std::string brief_summary;
    TrialStatus status = TrialStatus::other;
    std::string status_raw;    // original registry status string when mapped to `other`
    long enrollment = 0;       // participant count, >= 0
    std::optional<Date> start_date;
    std::optional<Date> completion_date;
    std::vector<std::string> conditions;
    std::vector<MedicalField> field_labels;
    bool summary_missing = false;
    bool summary_truncated = false;  // set when an oversize description was cut to fit

    bool operator==(const Trial& o) const {
        auto fields_eq = [](const std::vector<MedicalField>& a,
                            const std::vector<MedicalField>& b) {
            if (a.size() != b.size()) return false;
            for (std::size_t i = 0; i < a.size(); ++i)
                if (!(a[i] == b[i])) return false;
            return true;
        };
        return id == o.id && title == o.title && brief_summary == o.brief_summary &&
               status == o.status && status_raw == o.status_raw &&
               enrollment == o.enrollment && start_date == o.start_date &&
               completion_date == o.completion_date && conditions == o.conditions &&
               fields_eq(field_labels, o.field_labels) &&
               summary_missing == o.summary_missing &&
               summary_truncated == o.summary_truncated;
    }
};

// A filtered, ordered trial set for one (device, field, recency)
// combination. Position defines the 1-based global reference index.
struct Corpus {
    std::string device;
    MedicalField field;
    RecencyClass recency = RecencyClass::out_of_window;
    std::vector<Trial> trials;

    std::size_t size() const { return trials.size(); }

    void check_unique_ids() const {
        std::unordered_set<std::string_view> seen;
        for (const auto& t : trials) {
            if (t.id.empty()) throw InvariantViolation("trial with empty id");
            if (!seen.insert(t.id).second) {
                throw InvariantViolation("duplicate trial id: " + t.id);
            }
        }
    }
};

// Inclusion filter: keeps non-withdrawn trials with enrollment of at least
// 50 and a non-empty description. Order is preserved.
inline std::vector<Trial> filter_trials(const std::vector<Trial>& trials, const Date&) {
    std::vector<Trial> out;
    out.reserve(trials.size());
    for (const auto& t : trials) {
        if (t.status == TrialStatus::withdrawn) continue;
        if (t.enrollment < 50) continue;
        if (t.brief_summary.empty() || t.summary_missing) continue;
        out.push_back(t);
    }
    return out;
}

struct FilterAttrition {
    std::size_t input = 0;
    std::size_t withdrawn = 0;
    std::size_t under_enrolled = 0;
    std::size_t missing_summary = 0;
    std::size_t retained = 0;
};

// Same filter, but reports how many trials each rule removed. A trial is
// charged to the first rule that rejects it.
inline std::vector<Trial> filter_trials_with_attrition(const std::vector<Trial>& trials,
                                                       const Date& reference_date,
                                                       FilterAttrition& attrition) {
    attrition = FilterAttrition{};
    attrition.input = trials.size();
    std::vector<Trial> out;
    out.reserve(trials.size());
    for (const auto& t : trials) {
        if (t.status == TrialStatus::withdrawn) {
            ++attrition.withdrawn;
            continue;
        }
        if (t.enrollment < 50) {
            ++attrition.under_enrolled;
            continue;
        }
        if (t.brief_summary.empty() || t.summary_missing) {
            ++attrition.missing_summary;
            continue;
        }
        out.push_back(t);
    }
    attrition.retained = out.size();
    (void)reference_date;
    return out;
}

// Completed trials are classed by completion date against a five-year
// window, everything else by start date against a two-year window.
inline RecencyClass classify_recency(const Trial& trial, const Date& reference_date) {
    if (trial.status == TrialStatus::completed) {
        if (!trial.completion_date) {
            throw MissingDate("trial " + trial.id + ": completed without completion date");
        }
        if (in_closed_interval(*trial.completion_date, reference_date.shifted_years(-5),
                               reference_date)) {
            return RecencyClass::completed_within_5y;
        }
        return RecencyClass::out_of_window;
    }
    if (!trial.start_date) {
        throw MissingDate("trial " + trial.id + ": no start date");
    }
    if (in_closed_interval(*trial.start_date, reference_date.shifted_years(-2),
                           reference_date)) {
        return RecencyClass::new_within_2y;
    }
    return RecencyClass::out_of_window;
}

} // namespace trialdigest
