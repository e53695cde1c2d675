#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mts {

// All timestamps are UTC and aligned to whole hours; we store them as a count
// of hours since 1970-01-01T00:00:00Z. Day boundaries fall at stamps divisible
// by 24 because the epoch itself is a midnight.
using HourStamp = std::int64_t;

inline constexpr int kHoursPerDay = 24;

// Parses "YYYY-MM-DDTHH:MM:SSZ" (minutes/seconds must be zero) or the short
// form "YYYY-MM-DD". Throws IoError on anything else.
HourStamp parse_hour_utc(std::string_view iso);

// Formats as "YYYY-MM-DDTHH:00:00Z".
std::string format_hour_utc(HourStamp h);

// Civil-calendar helpers (proleptic Gregorian).
std::int64_t days_from_civil(int y, int m, int d);
void civil_from_days(std::int64_t z, int& y, int& m, int& d);

// Start of the hydrological year (Oct 1, 00:00 UTC) containing `h`.
HourStamp hydro_year_start(HourStamp h);

}  // namespace mts
