#pragma once

#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "trialdigest/error.hpp"

namespace trialdigest {

class MissingDate : public Error {
public:
    explicit MissingDate(const std::string& what) : Error(what) {}
};

// Calendar date. Registry records carry partial dates ("2021-05", "2021");
// missing components default to the first month/day.
struct Date {
    int year = 0;
    unsigned month = 1;
    unsigned day = 1;

    auto operator<=>(const Date&) const = default;

    std::chrono::year_month_day ymd() const {
        return std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day};
    }

    std::string to_string() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", year, month, day);
        return buf;
    }

    // Shifts by whole calendar years; an invalid result (Feb 29 in a
    // non-leap year) clamps to Feb 28.
    Date shifted_years(int delta) const {
        using namespace std::chrono;
        year_month_day d = ymd() + years{delta};
        if (!d.ok()) {
            return Date{static_cast<int>(d.year()), static_cast<unsigned>(d.month()), 28};
        }
        return Date{static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                    static_cast<unsigned>(d.day())};
    }

    static std::optional<Date> parse(std::string_view s) {
        auto read_int = [](std::string_view v) -> std::optional<int> {
            if (v.empty()) return std::nullopt;
            int out = 0;
            for (char c : v) {
                if (c < '0' || c > '9') return std::nullopt;
                out = out * 10 + (c - '0');
            }
            return out;
        };
        Date d;
        if (s.size() >= 4) {
            auto y = read_int(s.substr(0, 4));
            if (!y) return std::nullopt;
            d.year = *y;
        } else {
            return std::nullopt;
        }
        if (s.size() >= 7) {
            if (s[4] != '-') return std::nullopt;
            auto m = read_int(s.substr(5, 2));
            if (!m || *m < 1 || *m > 12) return std::nullopt;
            d.month = static_cast<unsigned>(*m);
        }
        if (s.size() >= 10) {
            if (s[7] != '-') return std::nullopt;
            auto dd = read_int(s.substr(8, 2));
            if (!dd || *dd < 1 || *dd > 31) return std::nullopt;
            d.day = static_cast<unsigned>(*dd);
        }
        if (s.size() != 4 && s.size() != 7 && s.size() != 10) return std::nullopt;
        return d;
    }
};

inline bool in_closed_interval(const Date& x, const Date& lo, const Date& hi) {
    return lo <= x && x <= hi;
}

} // namespace trialdigest
