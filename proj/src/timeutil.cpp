#include "tips/timeutil.hpp"

#include <cstdio>
#include <ctime>

#include "tips/errors.hpp"

namespace tips {

std::string format_rfc3339(UtcTime t) {
    std::time_t secs = std::chrono::system_clock::to_time_t(
        std::chrono::time_point_cast<std::chrono::system_clock::duration>(t));
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];  // generous: %04d can widen for out-of-range years
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

UtcTime parse_rfc3339(std::string_view text) {
    // Fixed-width form only: YYYY-MM-DDTHH:MM:SSZ
    if (text.size() != 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' ||
        text[13] != ':' || text[16] != ':' || text[19] != 'Z') {
        fail(ErrorCode::MalformedInput, "timestamp must be YYYY-MM-DDTHH:MM:SSZ");
    }
    int year = 0, mon = 0, day = 0, hour = 0, min = 0, sec = 0;
    std::string buf(text);
    if (std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d:%2dZ", &year, &mon, &day, &hour, &min,
                    &sec) != 6) {
        fail(ErrorCode::MalformedInput, "timestamp must be YYYY-MM-DDTHH:MM:SSZ");
    }
    if (mon < 1 || mon > 12 || day < 1 || day > 31 || hour > 23 || min > 59 || sec > 60) {
        fail(ErrorCode::MalformedInput, "timestamp field out of range");
    }
    std::tm tm{};
    tm.tm_year = year - 1900;
    tm.tm_mon = mon - 1;
    tm.tm_mday = day;
    tm.tm_hour = hour;
    tm.tm_min = min;
    tm.tm_sec = sec;
    std::time_t secs = timegm(&tm);
    if (secs == static_cast<std::time_t>(-1)) {
        fail(ErrorCode::MalformedInput, "timestamp out of representable range");
    }
    return UtcTime(std::chrono::seconds(secs));
}

}  // namespace tips
