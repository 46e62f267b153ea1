#pragma once

// Calendar periods used for sliced evaluation: evening peak, weekend, and
// legal-holiday spans.

#include <chrono>
#include <string>
#include <vector>

#include "mmst/data.hpp"

namespace mmst {

struct HolidayRange {
  std::string name;
  std::chrono::year_month_day first;  // inclusive
  std::chrono::year_month_day last;   // inclusive

  bool contains(std::chrono::sys_days d) const {
    return d >= std::chrono::sys_days{first} && d <= std::chrono::sys_days{last};
  }

  int length_days() const {
    return static_cast<int>(
               (std::chrono::sys_days{last} - std::chrono::sys_days{first}).count()) +
           1;
  }
};

// The five legal holiday spans of the 2023/24 passenger year.
inline std::vector<HolidayRange> default_holidays() {
  using namespace std::chrono;
  return {
      {"Spring Festival", 2023y / January / 21, 2023y / January / 27},
      {"Labor Day", 2023y / April / 29, 2023y / May / 3},
      {"Dragon Boat Festival", 2023y / June / 22, 2023y / June / 24},
      {"National Day", 2023y / September / 29, 2023y / October / 6},
      {"New Year's Day", 2023y / December / 30, 2024y / January / 1},
  };
}

inline bool is_holiday(Timestamp ts, const std::vector<HolidayRange>& ranges) {
  const auto day = std::chrono::floor<std::chrono::days>(ts);
  for (const auto& r : ranges) {
    if (r.contains(day)) return true;
  }
  return false;
}

inline bool is_weekend(Timestamp ts) {
  const std::chrono::weekday wd{std::chrono::floor<std::chrono::days>(ts)};
  return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

// Evening peak covers the hours 17, 18, 19 and 20.
inline bool is_evening(Timestamp ts) {
  const int h = hour_of(ts);
  return h >= 17 && h <= 20;
}

struct PeriodMasks {
  std::vector<bool> evening;
  std::vector<bool> weekend;
  std::vector<bool> holiday;

  std::size_t size() const { return evening.size(); }
};

inline PeriodMasks build_period_masks(const std::vector<Timestamp>& timestamps,
                                      const std::vector<HolidayRange>& holidays =
                                          default_holidays()) {
  PeriodMasks m;
  m.evening.reserve(timestamps.size());
  m.weekend.reserve(timestamps.size());
  m.holiday.reserve(timestamps.size());
  for (const auto ts : timestamps) {
    m.evening.push_back(is_evening(ts));
    m.weekend.push_back(is_weekend(ts));
    m.holiday.push_back(is_holiday(ts, holidays));
  }
  return m;
}

// "YYYY-MM-DD" -> year_month_day; throws ConfigError on malformed input.
inline std::chrono::year_month_day parse_date(const std::string& text) {
  auto ts = parse_timestamp(text + "T00:00:00");
  if (!ts) throw ConfigError("malformed date: '" + text + "' (expected YYYY-MM-DD)");
  return std::chrono::year_month_day{std::chrono::floor<std::chrono::days>(*ts)};
}

inline std::string format_date(std::chrono::year_month_day d) {
  return format_timestamp(std::chrono::sys_days{d}).substr(0, 10);
}

}  // namespace mmst
