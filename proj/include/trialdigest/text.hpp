#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace trialdigest {

// Invokes fn(index, begin, end) for every maximal "[n]" token, n a decimal
// integer with no internal spaces. end is one past the closing bracket.
template <typename Fn>
void for_each_citation_token(std::string_view text, Fn&& fn) {
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] != '[') {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < text.size() && text[j] >= '0' && text[j] <= '9') ++j;
        if (j > i + 1 && j < text.size() && text[j] == ']') {
            long value = 0;
            bool overflow = false;
            for (std::size_t k = i + 1; k < j; ++k) {
                value = value * 10 + (text[k] - '0');
                if (value > 1'000'000'000L) {
                    overflow = true;
                    break;
                }
            }
            if (!overflow) {
                fn(static_cast<int>(value), i, j + 1);
                i = j + 1;
                continue;
            }
        }
        ++i;
    }
}

// Replaces every "[n]" token with a single space.
inline std::string strip_citation_markers(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t prev = 0;
    for_each_citation_token(text, [&](int, std::size_t begin, std::size_t end) {
        out.append(text.substr(prev, begin - prev));
        out.push_back(' ');
        prev = end;
    });
    out.append(text.substr(prev));
    return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) words.emplace_back(text.substr(start, i - start));
    }
    return words;
}

// Word count used throughout: whitespace tokens after citation markers are
// stripped and whitespace collapsed.
inline std::size_t word_count(std::string_view text) {
    return split_words(strip_citation_markers(text)).size();
}

namespace detail {

inline const std::vector<std::string>& sentence_abbreviations() {
    static const std::vector<std::string> abbrevs = {
        "e.g", "i.e", "etc", "vs", "dr", "mr", "mrs", "ms", "st",
        "no", "fig", "al", "approx", "dept", "inc", "jr", "sr",
    };
    return abbrevs;
}

inline bool ends_with_abbreviation(std::string_view text, std::size_t dot_pos) {
    std::size_t end = dot_pos;
    std::size_t start = end;
    while (start > 0) {
        char c = text[start - 1];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '.') {
            --start;
        } else {
            break;
        }
    }
    std::string token(text.substr(start, end - start));
    for (char& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const auto& a : sentence_abbreviations()) {
        if (token == a) return true;
        // handles "e.g." style tokens where the previous dot is internal
        if (token.size() > a.size() && token.compare(token.size() - a.size(), a.size(), a) == 0 &&
            token[token.size() - a.size() - 1] == '.') {
            return true;
        }
    }
    return false;
}

} // namespace detail

// Splits on '.', '!' or '?' followed by whitespace or end of text. A
// terminator preceded by a known abbreviation does not end a sentence.
// Citation markers directly after the terminator stay with their sentence.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> sentences;
    std::size_t start = 0;
    std::size_t i = 0;
    auto flush = [&](std::size_t end) {
        while (start < end && std::isspace(static_cast<unsigned char>(text[start]))) ++start;
        std::size_t stop = end;
        while (stop > start && std::isspace(static_cast<unsigned char>(text[stop - 1]))) --stop;
        if (stop > start) sentences.emplace_back(text.substr(start, stop - start));
        start = end;
    };
    while (i < text.size()) {
        char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            bool at_end = (i + 1 == text.size());
            bool before_space =
                !at_end && std::isspace(static_cast<unsigned char>(text[i + 1]));
            if ((at_end || before_space) &&
                !(c == '.' && detail::ends_with_abbreviation(text, i))) {
                // attach any trailing " [n]" markers to this sentence
                std::size_t end = i + 1;
                std::size_t probe = end;
                while (true) {
                    std::size_t ws = probe;
                    while (ws < text.size() && text[ws] == ' ') ++ws;
                    if (ws < text.size() && text[ws] == '[') {
                        std::size_t k = ws + 1;
                        while (k < text.size() && text[k] >= '0' && text[k] <= '9') ++k;
                        if (k > ws + 1 && k < text.size() && text[k] == ']') {
                            probe = k + 1;
                            end = probe;
                            continue;
                        }
                    }
                    break;
                }
                flush(end);
                i = end;
                continue;
            }
        }
        ++i;
    }
    flush(text.size());
    return sentences;
}

inline std::string first_sentence(std::string_view text) {
    auto sentences = split_sentences(text);
    return sentences.empty() ? std::string{} : sentences.front();
}

// Lowercases, strips punctuation, splits on whitespace.
inline std::vector<std::string> normalize_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char raw : text) {
        unsigned char c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

inline std::string collapse_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = true;
    for (char raw : text) {
        if (std::isspace(static_cast<unsigned char>(raw))) {
            in_space = true;
        } else {
            if (in_space && !out.empty()) out.push_back(' ');
            out.push_back(raw);
            in_space = false;
        }
    }
    return out;
}

} // namespace trialdigest
