#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace stjgcn {

// Days since 1970-01-01 for a proleptic Gregorian civil date
// (Howard Hinnant's algorithm).
inline int64_t days_from_civil(int64_t y, int64_t m, int64_t d) {
    y -= m <= 2;
    int64_t era = (y >= 0 ? y : y - 399) / 400;
    int64_t yoe = y - era * 400;                                 // [0, 399]
    int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;  // [0, 365]
    int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;         // [0, 146096]
    return era * 146097 + doe - 719468;
}

inline void civil_from_days(int64_t z, int64_t& y, int64_t& m, int64_t& d) {
    z += 719468;
    int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    int64_t doe = z - era * 146097;
    int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    int64_t mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = yoe + era * 400 + (m <= 2 ? 1 : 0);
}

/// Parse "YYYY-MM-DDTHH:MM" or "YYYY-MM-DDTHH:MM:SS" to epoch seconds.
inline int64_t parse_iso_timestamp(const std::string& s) {
    auto fail = [&] { throw std::runtime_error("bad ISO-8601 timestamp: '" + s + "'"); };
    if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
        s[13] != ':')
        fail();
    auto num = [&](size_t pos, size_t len) -> int64_t {
        int64_t v = 0;
        for (size_t i = pos; i < pos + len; ++i) {
            if (s[i] < '0' || s[i] > '9') fail();
            v = v * 10 + (s[i] - '0');
        }
        return v;
    };
    int64_t y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2);
    int64_t sec = 0;
    if (s.size() >= 19) {
        if (s[16] != ':') fail();
        sec = num(17, 2);
    } else if (s.size() != 16) {
        fail();
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 59) fail();
    return (days_from_civil(y, mo, d) * 24 + h) * 3600 + mi * 60 + sec;
}

inline std::string format_iso_timestamp(int64_t epoch_seconds) {
    int64_t days = epoch_seconds / 86400;
    int64_t rem = epoch_seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    int64_t y, m, d;
    civil_from_days(days, y, m, d);
    char buf[48];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d", static_cast<int>(y),
                  static_cast<int>(m), static_cast<int>(d), static_cast<int>(rem / 3600),
                  static_cast<int>((rem % 3600) / 60));
    return buf;
}

/// Maps series indices to (time-of-day slot, day-of-week) given the series
/// start and sampling interval. Monday is weekday 0. The slot count is
/// 24h / interval.
struct Calendar {
    int64_t start_epoch_seconds = 0;
    int64_t interval_minutes = 5;

    int64_t slots_per_day() const { return 1440 / interval_minutes; }

    int64_t epoch_seconds_at(int64_t index) const {
        return start_epoch_seconds + index * interval_minutes * 60;
    }

    int64_t slot(int64_t index) const {
        check(index);
        int64_t minute_of_day = (epoch_seconds_at(index) / 60) % 1440;
        return minute_of_day / interval_minutes;
    }

    int64_t day_of_week(int64_t index) const {
        check(index);
        int64_t days = epoch_seconds_at(index) / 86400;
        return (days + 3) % 7;  // epoch day 0 (1970-01-01) is a Thursday
    }

    std::string timestamp(int64_t index) const { return format_iso_timestamp(epoch_seconds_at(index)); }

private:
    void check(int64_t index) const {
        if (index < 0)
            throw std::out_of_range("time index " + std::to_string(index) +
                                    " lies before the dataset calendar");
    }
};

}  // namespace stjgcn
