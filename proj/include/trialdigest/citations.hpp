#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "trialdigest/error.hpp"
#include "trialdigest/text.hpp"
#include "trialdigest/trial.hpp"

namespace trialdigest {

// One "[n]" token in a piece of text; span is [begin, end) in bytes.
struct Citation {
    int index = 0;
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const Citation&) const = default;
};

class UnmappedIndex : public Error {
public:
    UnmappedIndex(int local, std::size_t begin)
        : Error("citation [" + std::to_string(local) + "] at offset " +
                std::to_string(begin) + " is outside the batch"),
          local_index(local),
          offset(begin) {}
    int local_index;
    std::size_t offset;
};

class InvalidIndex : public Error {
public:
    explicit InvalidIndex(int index)
        : Error("reference index " + std::to_string(index) + " outside corpus") {}
};

// Maps one batch's local citation indices [1, local_count] onto global
// corpus indices: global = global_offset + local.
struct CitationMap {
    std::size_t global_offset = 0;  // index of the batch's first trial, 0-based
    std::size_t local_count = 0;
    std::size_t corpus_size = 0;

    bool contains(int local) const {
        return local >= 1 && static_cast<std::size_t>(local) <= local_count &&
               global_offset + static_cast<std::size_t>(local) <= corpus_size;
    }

    int map(int local) const {
        if (!contains(local)) throw UnmappedIndex(local, 0);
        return static_cast<int>(global_offset) + local;
    }
};

inline std::vector<Citation> extract_citations(std::string_view text) {
    std::vector<Citation> out;
    for_each_citation_token(text, [&](int index, std::size_t begin, std::size_t end) {
        out.push_back(Citation{index, begin, end});
    });
    return out;
}

struct RemapResult {
    std::string text;
    std::vector<Citation> dropped;  // unmappable citations, stripped from the text
};

// Rewrites batch-local citations into global space. Citations outside the
// map's domain are removed from the text and reported; everything outside
// citation spans is byte-identical.
inline RemapResult remap_citations_lenient(std::string_view text, const CitationMap& map) {
    RemapResult result;
    result.text.reserve(text.size());
    std::size_t prev = 0;
    for_each_citation_token(text, [&](int index, std::size_t begin, std::size_t end) {
        result.text.append(text.substr(prev, begin - prev));
        if (map.contains(index)) {
            result.text.push_back('[');
            result.text += std::to_string(map.map(index));
            result.text.push_back(']');
        } else {
            // drop exactly the marker bytes, nothing around them
            result.dropped.push_back(Citation{index, begin, end});
        }
        prev = end;
    });
    result.text.append(text.substr(prev));
    return result;
}

// Strict variant: every citation must lie in the map's domain.
inline std::string remap_citations(std::string_view text, const CitationMap& map) {
    RemapResult r = remap_citations_lenient(text, map);
    if (!r.dropped.empty()) {
        throw UnmappedIndex(r.dropped.front().index, r.dropped.front().begin);
    }
    return std::move(r.text);
}

struct ValidationReport {
    std::size_t total_citations = 0;
    std::set<int> unique_indices;           // valid in-range indices
    std::vector<Citation> out_of_range;
    double coverage_fraction = 0.0;         // |unique valid| / corpus size
};

inline ValidationReport validate(std::string_view text, std::size_t corpus_size) {
    if (corpus_size < 1) throw InvariantViolation("validate needs corpus_size >= 1");
    ValidationReport report;
    for (const auto& c : extract_citations(text)) {
        ++report.total_citations;
        if (c.index < 1 || static_cast<std::size_t>(c.index) > corpus_size) {
            report.out_of_range.push_back(c);
        } else {
            report.unique_indices.insert(c.index);
        }
    }
    report.coverage_fraction =
        static_cast<double>(report.unique_indices.size()) / static_cast<double>(corpus_size);
    return report;
}

// Final-output reference list: one "[i] {title} ({id})" line per cited
// index, ascending.
inline std::string render_reference_list(const std::set<int>& indices, const Corpus& corpus) {
    std::string out;
    for (int i : indices) {
        if (i < 1 || static_cast<std::size_t>(i) > corpus.trials.size()) throw InvalidIndex(i);
        const Trial& t = corpus.trials[static_cast<std::size_t>(i - 1)];
        if (!out.empty()) out += "\n";
        out += "[" + std::to_string(i) + "] " + t.title + " (" + t.id + ")";
    }
    return out;
}

} // namespace trialdigest
