#pragma once

// UTC timestamps as whole seconds since the Unix epoch, ISO-8601 on disk.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>

#include "stormnet/error.hpp"

namespace stormnet {

using TimePoint = std::int64_t;
inline constexpr TimePoint kHour = 3600;

/// Accepts "YYYY-MM-DDTHH:MM:SSZ" (the trailing Z and the seconds are optional).
inline TimePoint parse_iso8601(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char tail = 0;
  const int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &tail);
  if (n < 5 || (n == 7 && tail != 'Z')) throw ParseError("bad ISO-8601 timestamp '" + s + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) throw ParseError("invalid date '" + s + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<TimePoint>(days) * 86400 + h * 3600 + mi * 60 + sec;
}

inline std::string format_iso8601(TimePoint t) {
  using namespace std::chrono;
  const auto day_count = static_cast<int>((t >= 0 ? t : t - 86399) / 86400);
  const sys_days days{std::chrono::days{day_count}};
  const year_month_day ymd{days};
  const TimePoint rem = t - static_cast<TimePoint>(day_count) * 86400;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
  return buf;
}

}  // namespace stormnet
