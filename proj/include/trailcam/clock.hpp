#pragma once

// Local calendar arithmetic for sites configured with a fixed UTC offset.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>

#include "trailcam/error.hpp"

namespace trailcam {

struct UtcOffset {
  int minutes = 0;

  // Accepts "UTC", "Z", "+HH:MM", "-HH:MM", "+HHMM" or "-HH".
  static UtcOffset parse(const std::string& text) {
    if (text.empty() || text == "UTC" || text == "Z" || text == "utc") return {0};
    const char sign = text[0];
    if (sign != '+' && sign != '-') throw ValidationError("invalid UTC offset '" + text + "'");
    std::string digits;
    for (std::size_t i = 1; i < text.size(); ++i)
      if (text[i] != ':') digits += text[i];
    if (digits.size() != 2 && digits.size() != 4) throw ValidationError("invalid UTC offset '" + text + "'");
    for (char c : digits)
      if (c < '0' || c > '9') throw ValidationError("invalid UTC offset '" + text + "'");
    int hh = std::stoi(digits.substr(0, 2));
    int mm = digits.size() == 4 ? std::stoi(digits.substr(2, 2)) : 0;
    if (hh > 14 || mm > 59) throw ValidationError("invalid UTC offset '" + text + "'");
    int total = hh * 60 + mm;
    return {sign == '-' ? -total : total};
  }

  std::string str() const {
    if (minutes == 0) return "UTC";
    char buf[16];
    int a = minutes < 0 ? -minutes : minutes;
    std::snprintf(buf, sizeof buf, "%c%02d:%02d", minutes < 0 ? '-' : '+', a / 60, a % 60);
    return buf;
  }
};

inline std::int64_t local_seconds(std::int64_t unix_seconds, UtcOffset tz) {
  return unix_seconds + static_cast<std::int64_t>(tz.minutes) * 60;
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t seconds_since_local_midnight(std::int64_t unix_seconds, UtcOffset tz) {
  std::int64_t local = local_seconds(unix_seconds, tz);
  return local - floor_div(local, 86400) * 86400;
}

// Calendar date "YYYY-MM-DD" of the local day containing the timestamp.
inline std::string local_date(std::int64_t unix_seconds, UtcOffset tz) {
  using namespace std::chrono;
  sys_days day{days{floor_div(local_seconds(unix_seconds, tz), 86400)}};
  year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline bool is_valid_date(const std::string& text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (text.size() != 10 || std::sscanf(text.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) return false;
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  return ymd.ok();
}

inline void require_date(const std::string& text) {
  if (!is_valid_date(text)) throw ValidationError("invalid date '" + text + "' (expected YYYY-MM-DD)");
}

// Unix seconds at local midnight starting `date`.
inline std::int64_t local_midnight(const std::string& date, UtcOffset tz) {
  require_date(date);
  int y = std::stoi(date.substr(0, 4));
  unsigned m = static_cast<unsigned>(std::stoi(date.substr(5, 2)));
  unsigned d = static_cast<unsigned>(std::stoi(date.substr(8, 2)));
  using namespace std::chrono;
  sys_days day = year_month_day{year{y}, month{m}, std::chrono::day{d}};
  return static_cast<std::int64_t>(day.time_since_epoch().count()) * 86400 - static_cast<std::int64_t>(tz.minutes) * 60;
}

}  // namespace trailcam
