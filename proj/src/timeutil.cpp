#include "mtslstm/timeutil.hpp"

#include <cstdio>

#include "mtslstm/common.hpp"

namespace mts {

// Howard Hinnant's public-domain civil calendar algorithms.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

namespace {

bool parse_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace

HourStamp parse_hour_utc(std::string_view iso) {
  int y, mo, d, h = 0, mi = 0, se = 0;
  bool ok = parse_int(iso, 0, 4, y) && iso.size() > 4 && iso[4] == '-' &&
            parse_int(iso, 5, 2, mo) && iso.size() > 7 && iso[7] == '-' &&
            parse_int(iso, 8, 2, d);
  if (ok && iso.size() == 10) {
    // date-only form, midnight
  } else if (ok && iso.size() == 20 && iso[10] == 'T' && iso[13] == ':' &&
             iso[16] == ':' && iso[19] == 'Z') {
    ok = parse_int(iso, 11, 2, h) && parse_int(iso, 14, 2, mi) &&
         parse_int(iso, 17, 2, se);
  } else {
    ok = false;
  }
  if (!ok || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi != 0 ||
      se != 0) {
    throw IoError("bad UTC timestamp (want YYYY-MM-DDTHH:00:00Z): " +
                  std::string(iso));
  }
  return days_from_civil(y, mo, d) * kHoursPerDay + h;
}

std::string format_hour_utc(HourStamp hs) {
  std::int64_t days = hs / kHoursPerDay;
  int hour = static_cast<int>(hs % kHoursPerDay);
  if (hour < 0) {
    hour += kHoursPerDay;
    days -= 1;
  }
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:00:00Z", y, m, d, hour);
  return buf;
}

HourStamp hydro_year_start(HourStamp h) {
  int y, m, d;
  civil_from_days(h >= 0 ? h / kHoursPerDay : (h - 23) / kHoursPerDay, y, m, d);
  int start_year = (m >= 10) ? y : y - 1;
  return days_from_civil(start_year, 10, 1) * kHoursPerDay;
}

}  // namespace mts
