#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "far/errors.hpp"

namespace far {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

inline constexpr Timestamp kHalfHourSeconds = 1800;
inline constexpr Timestamp kDaySeconds = 86400;

struct CivilTime {
  int year;
  unsigned month;
  unsigned day;
  int hour;
  int minute;
  int second;
};

inline CivilTime to_civil(Timestamp t) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{t}};
  const auto day_point = floor<days>(tp);
  const year_month_day ymd{day_point};
  const auto secs = (tp - day_point).count();
  return {int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()),
          static_cast<int>(secs / 3600), static_cast<int>((secs / 60) % 60),
          static_cast<int>(secs % 60)};
}

inline Timestamp from_civil(int y, unsigned m, unsigned d, int hh = 0, int mm = 0,
                            int ss = 0) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw InputError("invalid calendar date");
  const sys_days days_point{ymd};
  return static_cast<Timestamp>(days_point.time_since_epoch().count()) * kDaySeconds +
         hh * 3600 + mm * 60 + ss;
}

/// Formats as `YYYY-MM-DDTHH:MM:SSZ`.
inline std::string format_iso8601(Timestamp t) {
  const auto c = to_civil(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", c.year, c.month,
                c.day, c.hour, c.minute, c.second);
  return buf;
}

/// Accepts `YYYY-MM-DDTHH:MM[:SS][Z]` (UTC only).
inline Timestamp parse_iso8601(std::string_view s) {
  int y = 0, hh = 0, mm = 0, ss = 0;
  unsigned mo = 0, d = 0;
  const std::string str(s);
  const int n = std::sscanf(str.c_str(), "%d-%u-%uT%d:%d:%d", &y, &mo, &d, &hh, &mm, &ss);
  if (n < 5) throw InputError("malformed ISO-8601 timestamp: '" + str + "'");
  if (hh < 0 || hh > 23 || mm < 0 || mm > 59 || ss < 0 || ss > 60)
    throw InputError("timestamp out of range: '" + str + "'");
  return from_civil(y, mo, d, hh, mm, ss);
}

inline unsigned days_in_month(int y, unsigned m) {
  using namespace std::chrono;
  return unsigned(year_month_day_last{year{y} / month{m} / last}.day());
}

inline unsigned days_in_year(int y) {
  return std::chrono::year{y}.is_leap() ? 366u : 365u;
}

}  // namespace far
