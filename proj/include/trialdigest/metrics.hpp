#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "trialdigest/citations.hpp"
#include "trialdigest/error.hpp"
#include "trialdigest/text.hpp"

namespace trialdigest {

class EmptyText : public Error {
public:
    EmptyText() : Error("text is empty") {}
};

class EmptyInput : public Error {
public:
    explicit EmptyInput(const std::string& what) : Error(what) {}
};

class DegenerateInput : public Error {
public:
    explicit DegenerateInput(const std::string& what) : Error(what) {}
};

// Vowel-run heuristic: contiguous vowel groups count one syllable each
// ('y' is a vowel except word-initially); a trailing silent 'e' is dropped
// unless it is the only syllable. Non-alphabetic characters are ignored.
inline int count_syllables(std::string_view word) {
    std::string w;
    for (char raw : word) {
        unsigned char c = static_cast<unsigned char>(raw);
        if (std::isalpha(c)) w.push_back(static_cast<char>(std::tolower(c)));
    }
    if (w.empty()) return 0;
    auto is_vowel = [&](std::size_t i) {
        char c = w[i];
        if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return true;
        return c == 'y' && i > 0;
    };
    int runs = 0;
    bool in_run = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (is_vowel(i)) {
            if (!in_run) ++runs;
            in_run = true;
        } else {
            in_run = false;
        }
    }
    if (runs > 1 && w.back() == 'e' && w.size() >= 2 && !is_vowel(w.size() - 2)) {
        --runs;
    }
    return std::max(runs, 1);
}

struct TextStats {
    std::size_t sentences = 0;
    std::size_t words = 0;
    std::size_t polysyllables = 0;  // words with >= 3 syllables
};

inline TextStats text_stats(std::string_view text) {
    if (text.empty()) throw EmptyText{};
    TextStats stats;
    stats.sentences = split_sentences(text).size();
    if (stats.sentences == 0) stats.sentences = 1;
    auto words = split_words(strip_citation_markers(text));
    stats.words = words.size();
    for (const auto& w : words) {
        if (count_syllables(w) >= 3) ++stats.polysyllables;
    }
    return stats;
}

// SMOG grade = 3.1291 + 1.0430 * sqrt(polysyllables * 30 / sentences),
// unrounded, applied to the whole text.
inline double smog(const TextStats& stats) {
    if (stats.sentences < 1) throw DegenerateInput("smog needs at least one sentence");
    double density = static_cast<double>(stats.polysyllables) * 30.0 /
                     static_cast<double>(stats.sentences);
    return 3.1291 + 1.0430 * std::sqrt(density);
}

inline double smog(std::string_view text) { return smog(text_stats(text)); }

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr int max_iterations = 300;
    constexpr double eps = 3.0e-14;
    constexpr double fpmin = 1.0e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iterations; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                   b * std::log(1.0 - x);
    double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return bt * beta_cf(a, b, x) / a;
    }
    return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

} // namespace detail

// P(|T| > |t|) for Student's t with df degrees of freedom.
inline double student_t_two_tailed_p(double t, double df) {
    if (df <= 0.0) throw DegenerateInput("degrees of freedom must be positive");
    if (t == 0.0) return 1.0;
    double x = df / (df + t * t);
    return detail::incomplete_beta(df / 2.0, 0.5, x);
}

struct TTestResult {
    double mean1 = 0, sd1 = 0;
    long n1 = 0;
    double mean2 = 0, sd2 = 0;
    long n2 = 0;
    double t_statistic = 0;
    double degrees_of_freedom = 0;
    double p_value_two_tailed = 1;
    bool pooled = false;
};

inline TTestResult welch_t_test(double mean1, double sd1, long n1, double mean2, double sd2,
                                long n2) {
    if (n1 < 2 || n2 < 2) throw DegenerateInput("t-test needs n >= 2 per group");
    if (sd1 <= 0 || sd2 <= 0) throw DegenerateInput("t-test needs positive deviations");
    double v1 = sd1 * sd1 / static_cast<double>(n1);
    double v2 = sd2 * sd2 / static_cast<double>(n2);
    TTestResult r{mean1, sd1, n1, mean2, sd2, n2, 0, 0, 1, false};
    r.t_statistic = (mean1 - mean2) / std::sqrt(v1 + v2);
    r.degrees_of_freedom = (v1 + v2) * (v1 + v2) /
                           (v1 * v1 / static_cast<double>(n1 - 1) +
                            v2 * v2 / static_cast<double>(n2 - 1));
    r.p_value_two_tailed = student_t_two_tailed_p(r.t_statistic, r.degrees_of_freedom);
    return r;
}

inline TTestResult pooled_t_test(double mean1, double sd1, long n1, double mean2, double sd2,
                                 long n2) {
    if (n1 < 2 || n2 < 2) throw DegenerateInput("t-test needs n >= 2 per group");
    if (sd1 <= 0 || sd2 <= 0) throw DegenerateInput("t-test needs positive deviations");
    TTestResult r{mean1, sd1, n1, mean2, sd2, n2, 0, 0, 1, true};
    double df = static_cast<double>(n1 + n2 - 2);
    double sp2 = ((n1 - 1) * sd1 * sd1 + (n2 - 1) * sd2 * sd2) / df;
    r.t_statistic = (mean1 - mean2) /
                    std::sqrt(sp2 * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
    r.degrees_of_freedom = df;
    r.p_value_two_tailed = student_t_two_tailed_p(r.t_statistic, df);
    return r;
}

struct RegressionResult {
    double slope = 0;
    double intercept = 0;
    double r_squared = 0;
};

// Ordinary least squares over (x, y) pairs.
inline RegressionResult linear_fit(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2) throw DegenerateInput("linear_fit needs at least 2 points");
    double sx = 0, sy = 0;
    for (const auto& [x, y] : points) {
        sx += x;
        sy += y;
    }
    const double n = static_cast<double>(points.size());
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if (sxx == 0.0) throw DegenerateInput("all x values equal");
    RegressionResult r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double ss_res = 0, ss_tot = 0;
    for (const auto& [x, y] : points) {
        double e = y - (r.slope * x + r.intercept);
        ss_res += e * e;
        ss_tot += (y - my) * (y - my);
    }
    r.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    r.r_squared = std::clamp(r.r_squared, 0.0, 1.0);
    return r;
}

// Exact LCS length by dynamic programming, two rolling rows.
inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) {
                curr[j] = prev[j - 1] + 1;
            } else {
                curr[j] = std::max(prev[j], curr[j - 1]);
            }
        }
        std::swap(prev, curr);
    }
    return prev[b.size()];
}

// ROUGE-L F: R = LCS/|ref|, P = LCS/|cand|, F = (1+b^2)RP / (R + b^2 P).
inline double rouge_l_f1(const std::vector<std::string>& reference_tokens,
                         const std::vector<std::string>& candidate_tokens, double beta = 1.0) {
    if (reference_tokens.empty() || candidate_tokens.empty()) {
        throw EmptyInput("rouge_l_f1 needs non-empty token lists");
    }
    if (beta <= 0) throw DegenerateInput("beta must be positive");
    double lcs = static_cast<double>(lcs_length(reference_tokens, candidate_tokens));
    double recall = lcs / static_cast<double>(reference_tokens.size());
    double precision = lcs / static_cast<double>(candidate_tokens.size());
    double denom = recall + beta * beta * precision;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta * beta) * recall * precision / denom;
}

inline double rouge_l_f1_text(std::string_view reference, std::string_view candidate,
                              double beta = 1.0) {
    return rouge_l_f1(normalize_tokens(reference), normalize_tokens(candidate), beta);
}

struct SummaryStats {
    double mean = 0;
    double stddev = 0;  // sample deviation, n-1 denominator
    std::size_t n = 0;
    double min = 0;
    double max = 0;
    bool degenerate = false;  // single observation
};

inline SummaryStats summarize_distribution(const std::vector<double>& values) {
    if (values.empty()) throw EmptyInput("summarize_distribution of empty list");
    SummaryStats s;
    s.n = values.size();
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n == 1) {
        s.stddev = 0;
        s.degenerate = true;
        return s;
    }
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
    return s;
}

// --- JSON report assembly -------------------------------------------------

struct SummaryMetrics {
    std::string label;
    double smog_grade = 0;
    std::size_t words = 0;
    std::size_t unique_references = 0;
    std::size_t citation_tokens = 0;
    std::optional<double> utilization;  // needs a corpus size
};

inline SummaryMetrics summary_metrics(std::string_view text, std::optional<std::size_t> corpus_size,
                                      std::string label = {}) {
    SummaryMetrics m;
    m.label = std::move(label);
    TextStats stats = text_stats(text);
    m.smog_grade = smog(stats);
    m.words = stats.words;
    auto citations = extract_citations(text);
    m.citation_tokens = citations.size();
    if (corpus_size) {
        ValidationReport report = validate(text, *corpus_size);
        m.unique_references = report.unique_indices.size();
        m.utilization = report.coverage_fraction;
    } else {
        std::set<int> unique;
        for (const auto& c : citations) unique.insert(c.index);
        m.unique_references = unique.size();
    }
    return m;
}

inline nlohmann::json to_json(const SummaryStats& s) {
    return {{"mean", s.mean},  {"stddev", s.stddev},       {"n", s.n},
            {"min", s.min},    {"max", s.max},             {"degenerate", s.degenerate}};
}

inline nlohmann::json to_json(const TTestResult& t) {
    return {{"mean1", t.mean1},
            {"sd1", t.sd1},
            {"n1", t.n1},
            {"mean2", t.mean2},
            {"sd2", t.sd2},
            {"n2", t.n2},
            {"t_statistic", t.t_statistic},
            {"degrees_of_freedom", t.degrees_of_freedom},
            {"p_value_two_tailed", t.p_value_two_tailed},
            {"pooled", t.pooled}};
}

inline nlohmann::json to_json(const RegressionResult& r) {
    return {{"slope", r.slope}, {"intercept", r.intercept}, {"r_squared", r.r_squared}};
}

inline nlohmann::json to_json(const SummaryMetrics& m) {
    nlohmann::json j{{"label", m.label},
                     {"smog", m.smog_grade},
                     {"words", m.words},
                     {"unique_references", m.unique_references},
                     {"citation_tokens", m.citation_tokens}};
    if (m.utilization) j["utilization"] = *m.utilization;
    return j;
}

// Full evaluation report: per-summary rows plus aggregate distributions,
// with the t-test and reference-inclusion regression when computable.
inline nlohmann::json metrics_report(const std::vector<SummaryMetrics>& items,
                                     std::optional<TTestResult> readability_test = std::nullopt,
                                     std::optional<RegressionResult> reference_fit = std::nullopt) {
    nlohmann::json report;
    nlohmann::json rows = nlohmann::json::array();
    std::vector<double> smogs, lengths, utilizations;
    for (const auto& m : items) {
        rows.push_back(to_json(m));
        smogs.push_back(m.smog_grade);
        lengths.push_back(static_cast<double>(m.words));
        if (m.utilization) utilizations.push_back(*m.utilization);
    }
    report["summaries"] = rows;
    if (!items.empty()) {
        report["aggregate"]["smog"] = to_json(summarize_distribution(smogs));
        report["aggregate"]["words"] = to_json(summarize_distribution(lengths));
        if (!utilizations.empty()) {
            report["aggregate"]["utilization"] = to_json(summarize_distribution(utilizations));
        }
    }
    if (readability_test) report["readability_t_test"] = to_json(*readability_test);
    if (reference_fit) report["reference_inclusion_fit"] = to_json(*reference_fit);
    return report;
}

} // namespace trialdigest
