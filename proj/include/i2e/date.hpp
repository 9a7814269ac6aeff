#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace i2e {

/// A calendar day. Day arithmetic is plain integer arithmetic on sys_days.
using Date = std::chrono::sys_days;

/// Parses `YYYY-MM-DD`. Throws FormatError on anything else.
Date parse_date(std::string_view text);
std::string format_date(Date d);

Date make_date(int year, unsigned month, unsigned day);

/// Days since 1970-01-01.
inline std::int64_t day_number(Date d) { return d.time_since_epoch().count(); }
inline Date from_day_number(std::int64_t n) { return Date{std::chrono::days{n}}; }

/// Seconds since the Unix epoch at 00:00 UTC of `d`.
std::int64_t epoch_seconds(Date d);
/// UTC calendar day containing the epoch second `s`.
Date date_from_epoch_seconds(std::int64_t s);

int day_of_year(Date d);
bool is_weekend(Date d);

/// ISO-8601 week (year, week number 1..53).
std::pair<int, int> iso_week(Date d);

/// Closed date interval.
struct DateRange {
  Date first;
  Date last;

  bool contains(Date d) const { return first <= d && d <= last; }
  bool empty() const { return last < first; }
  bool overlaps(const DateRange& other) const {
    return !(last < other.first || other.last < first);
  }
};

}  // namespace i2e
