#pragma once

#include <random>
#include <string>
#include <vector>

#include <trialdigest/trial.hpp>

namespace testsupport {

// Deterministic synthetic corpora for property tests. Titles are unique;
// descriptions are a few sentences of plausible study prose with the
// first sentence length varied so packing decisions differ across trials.
inline trialdigest::Corpus synthetic_corpus(std::size_t n_trials, unsigned seed,
                                            const std::string& device = "Fitbit") {
    static const std::vector<std::string> openers = {
        "This randomized controlled study evaluates",
        "The investigation examines",
        "This prospective cohort study measures",
        "The trial assesses",
        "This feasibility study explores",
        "The program tests",
    };
    static const std::vector<std::string> subjects = {
        "wearable activity trackers",      "continuous heart rate monitoring",
        "step count feedback",             "sleep quality tracking",
        "remote exercise coaching",        "daily movement goals",
        "sedentary behavior alerts",       "physical activity adherence",
    };
    static const std::vector<std::string> cohorts = {
        "in older adults",                "among cancer survivors",
        "for postoperative patients",     "in adolescents with obesity",
        "among sedentary office workers", "for participants with hypertension",
        "in rural communities",           "among pregnant participants",
    };
    static const std::vector<std::string> tails = {
        "Participants wear the device continuously for twelve weeks.",
        "Outcomes include adherence, satisfaction, and clinical measures.",
        "The control group receives standard care without feedback.",
        "Follow-up visits occur at three and six months.",
        "Data are collected through the device vendor platform.",
    };

    std::mt19937 rng(seed);
    trialdigest::Corpus corpus;
    corpus.device = device;
    corpus.field = trialdigest::MedicalField::from_name("general_physiology");
    corpus.recency = trialdigest::RecencyClass::completed_within_5y;
    for (std::size_t i = 0; i < n_trials; ++i) {
        trialdigest::Trial t;
        t.id = "NCT" + std::to_string(90000000 + seed % 1000 * 10000 + i);
        t.title = "Study " + std::to_string(i + 1) + " of " +
                  subjects[rng() % subjects.size()] + " " + cohorts[rng() % cohorts.size()];
        std::string first = openers[rng() % openers.size()] + " " +
                            subjects[rng() % subjects.size()] + " " +
                            cohorts[rng() % cohorts.size()];
        std::size_t extra = rng() % 3;
        for (std::size_t e = 0; e < extra; ++e) {
            first += " and " + subjects[rng() % subjects.size()];
        }
        first += ".";
        std::string description = first;
        std::size_t n_tails = 1 + rng() % 3;
        for (std::size_t k = 0; k < n_tails; ++k) {
            description += " " + tails[rng() % tails.size()];
        }
        t.brief_summary = description;
        t.status = trialdigest::TrialStatus::completed;
        t.enrollment = 50 + static_cast<long>(rng() % 400);
        t.completion_date = trialdigest::Date{2023, 1 + static_cast<unsigned>(rng() % 12), 10};
        t.start_date = trialdigest::Date{2021, 1 + static_cast<unsigned>(rng() % 12), 5};
        corpus.trials.push_back(std::move(t));
    }
    return corpus;
}

} // namespace testsupport
