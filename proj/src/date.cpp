#include "i2e/date.hpp"

#include <charconv>
#include <cstdio>

#include "i2e/error.hpp"

namespace i2e {

using namespace std::chrono;

namespace {

int parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return -1;
  return v;
}

}  // namespace

Date parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw FormatError("invalid date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  int y = parse_int(text.substr(0, 4));
  int m = parse_int(text.substr(5, 2));
  int d = parse_int(text.substr(8, 2));
  year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  if (y < 0 || m < 0 || d < 0 || !ymd.ok()) {
    throw FormatError("invalid date '" + std::string(text) + "'");
  }
  return sys_days{ymd};
}

std::string format_date(Date d) {
  year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Date make_date(int y, unsigned m, unsigned d) {
  year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw FormatError("invalid calendar date");
  return sys_days{ymd};
}

std::int64_t epoch_seconds(Date d) { return day_number(d) * 86400; }

Date date_from_epoch_seconds(std::int64_t s) {
  std::int64_t days = s / 86400;
  if (s % 86400 < 0) --days;
  return from_day_number(days);
}

int day_of_year(Date d) {
  year_month_day ymd{d};
  Date jan1 = sys_days{ymd.year() / January / 1};
  return static_cast<int>((d - jan1).count()) + 1;
}

bool is_weekend(Date d) {
  weekday wd{d};
  return wd == Saturday || wd == Sunday;
}

std::pair<int, int> iso_week(Date d) {
  // The ISO week belongs to the year containing its Thursday.
  weekday wd{d};
  int iso_wd = static_cast<int>(wd.iso_encoding());  // Mon=1..Sun=7
  Date thursday = d + days{4 - iso_wd};
  year_month_day tymd{thursday};
  Date jan1 = sys_days{tymd.year() / January / 1};
  int week = static_cast<int>((thursday - jan1).count()) / 7 + 1;
  return {static_cast<int>(tymd.year()), week};
}

}  // namespace i2e
