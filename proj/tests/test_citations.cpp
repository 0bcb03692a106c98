#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <sstream>

#include <trialdigest/citations.hpp>

using namespace trialdigest;

namespace {

std::string read_fixture(const std::string& name) {
    std::ifstream in(std::string(TRIALDIGEST_TEST_DIR) + "/fixtures/" + name);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string delete_citation_tokens(std::string_view text) {
    std::string out;
    std::size_t prev = 0;
    for_each_citation_token(text, [&](int, std::size_t begin, std::size_t end) {
        out.append(text.substr(prev, begin - prev));
        prev = end;
    });
    out.append(text.substr(prev));
    return out;
}

} // namespace

TEST_CASE("extraction over the published sample summary") {
    std::string text = read_fixture("sample_summary.txt");
    auto citations = extract_citations(text);
    CHECK(citations.size() == 11);
    std::set<int> unique;
    for (const auto& c : citations) unique.insert(c.index);
    CHECK(unique == std::set<int>{1, 2, 5, 6, 8, 10, 14, 15, 31, 32, 33});
}

TEST_CASE("extraction basics") {
    CHECK(extract_citations("no citations here").empty());

    auto cs = extract_citations("[1], [1], [2]");
    REQUIRE(cs.size() == 3);
    CHECK(cs[0].index == 1);
    CHECK(cs[1].index == 1);
    CHECK(cs[2].index == 2);
    std::set<int> unique{cs[0].index, cs[1].index, cs[2].index};
    CHECK(unique.size() == 2);

    CHECK(extract_citations("[a] [] [1 2] [3.5] [12").empty());
    auto spans = extract_citations("x [7] y");
    REQUIRE(spans.size() == 1);
    CHECK(spans[0].begin == 2);
    CHECK(spans[0].end == 5);
}

TEST_CASE("remap applies the batch offset") {
    CitationMap map{15, 15, 45};  // second batch of a 45-trial corpus
    CHECK(remap_citations("improves sleep [3]", map) == "improves sleep [18]");
}

TEST_CASE("remap under the identity offset changes nothing") {
    CitationMap map{0, 15, 39};
    std::string text = "first [1] then [15].";
    CHECK(remap_citations(text, map) == text);
}

TEST_CASE("out-of-domain local citation") {
    CitationMap map{0, 15, 39};
    CHECK_THROWS_AS(remap_citations("bad [16]", map), UnmappedIndex);
    auto lenient = remap_citations_lenient("bad [16] good [2]", map);
    REQUIRE(lenient.dropped.size() == 1);
    CHECK(lenient.dropped[0].index == 16);
    CHECK(lenient.text == "bad  good [2]");
}

TEST_CASE("remap then extract commutes with extract then map") {
    std::mt19937 rng(21);
    static const char* fillers[] = {"sleep", "activity,", "improves.", "device", "cohort"};
    for (int round = 0; round < 300; ++round) {
        std::size_t offset = rng() % 60;
        std::size_t count = 1 + rng() % 15;
        CitationMap map{offset, count, offset + count + rng() % 20};
        std::string text;
        std::vector<int> locals;
        std::size_t pieces = rng() % 12;
        for (std::size_t i = 0; i < pieces; ++i) {
            if (rng() % 2) {
                text += fillers[rng() % 5];
                text += ' ';
            } else {
                int local = 1 + static_cast<int>(rng() % count);
                locals.push_back(local);
                text += "[" + std::to_string(local) + "] ";
            }
        }
        std::string remapped = remap_citations(text, map);
        auto re_extracted = extract_citations(remapped);
        REQUIRE(re_extracted.size() == locals.size());
        for (std::size_t i = 0; i < locals.size(); ++i) {
            CHECK(re_extracted[i].index == map.map(locals[i]));
        }
        // nothing outside citation spans changed
        CHECK(delete_citation_tokens(text) == delete_citation_tokens(remapped));
    }
}

TEST_CASE("lenient remap also leaves non-citation bytes intact") {
    CitationMap map{0, 3, 10};
    std::string text = "keep [2] drop [9] keep [1], tail";
    auto result = remap_citations_lenient(text, map);
    CHECK(delete_citation_tokens(text) == delete_citation_tokens(result.text));
}

TEST_CASE("validation of the sample summary against a 39-trial corpus") {
    std::string text = read_fixture("sample_summary.txt");
    ValidationReport report = validate(text, 39);
    CHECK(report.out_of_range.empty());
    CHECK(report.unique_indices.size() == 11);
    CHECK(report.coverage_fraction == Catch::Approx(11.0 / 39.0).epsilon(1e-12));
}

TEST_CASE("validation flags out-of-range and handles empty text") {
    ValidationReport over = validate("[40]", 39);
    REQUIRE(over.out_of_range.size() == 1);
    CHECK(over.out_of_range[0].index == 40);
    CHECK(over.unique_indices.empty());

    ValidationReport none = validate("plain text", 12);
    CHECK(none.total_citations == 0);
    CHECK(none.coverage_fraction == 0.0);

    ValidationReport zero = validate("[0] is not a real index", 5);
    REQUIRE(zero.out_of_range.size() == 1);
    CHECK(zero.out_of_range[0].index == 0);
}

TEST_CASE("coverage is 1 exactly when every index is cited") {
    CHECK(validate("[1] [2] [3]", 3).coverage_fraction == 1.0);
    CHECK(validate("[1] [2]", 3).coverage_fraction < 1.0);
}

TEST_CASE("reference list renders ascending with titles and ids") {
    Corpus corpus;
    corpus.device = "Fitbit";
    for (int i = 1; i <= 3; ++i) {
        Trial t;
        t.id = "NCT0000000" + std::to_string(i);
        t.title = "Study " + std::to_string(i);
        t.brief_summary = "text";
        corpus.trials.push_back(t);
    }
    CHECK(render_reference_list({2, 1}, corpus) ==
          "[1] Study 1 (NCT00000001)\n[2] Study 2 (NCT00000002)");
    CHECK(render_reference_list({}, corpus).empty());
    CHECK_THROWS_AS(render_reference_list({4}, corpus), InvalidIndex);
}

TEST_CASE("a single cited index resolves against a larger corpus") {
    Corpus corpus;
    corpus.device = "Fitbit";
    for (int i = 1; i <= 39; ++i) {
        Trial t;
        t.id = "NCT" + std::to_string(70000000 + i);
        t.title = "Registry Entry " + std::to_string(i);
        t.brief_summary = "text";
        corpus.trials.push_back(t);
    }
    CHECK(render_reference_list({33}, corpus) == "[33] Registry Entry 33 (NCT70000033)");
}
