#pragma once

// Desk-scale synthetic multi-mode hub data: hourly flows with daily and
// weekly cycles, node-specific phases, holiday surges, weather effects, and
// planted lag-1 coupling between node pairs (2k -> 2k+1).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmst/calendar.hpp"
#include "mmst/external.hpp"

namespace mmst {

struct SyntheticSpec {
  std::size_t nodes = 6;
  std::size_t days = 60;
  std::uint64_t seed = 1;
  double coupling = 0.5;
  std::chrono::year_month_day start{std::chrono::year{2023}, std::chrono::January,
                                    std::chrono::day{21}};
  std::vector<HolidayRange> holidays = default_holidays();
};

struct SyntheticData {
  RawDataset flows;
  std::vector<ExternalFactorRecord> factors;
  // (driver, follower): follower(t) depends on driver(t - 1).
  std::vector<std::pair<std::size_t, std::size_t>> coupled_pairs;
};

inline std::string synthetic_node_name(std::size_t i) {
  static const char* kModes[] = {"subway", "taxi", "coach", "ride_hailing", "private_car", "bus"};
  const std::size_t mode = (i / 2) % 6;
  std::string name = std::string(kModes[mode]) + (i % 2 == 0 ? "_arrival" : "_departure");
  if (i >= 12) name += "_" + std::to_string(i / 12);
  return name;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.nodes < 2) throw ConfigError("synthetic data needs at least 2 nodes");
  if (spec.days < 7) throw ConfigError("synthetic data needs at least 7 days");

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };

  const std::size_t n = spec.nodes;
  const std::size_t steps = spec.days * 24;

  struct NodeShape {
    double level, morning, evening, morning_amp, evening_amp, weekend, holiday;
  };
  std::vector<NodeShape> shape;
  for (std::size_t j = 0; j < n; ++j) {
    shape.push_back({between(400.0, 3000.0), between(7.0, 10.0), between(16.5, 19.5),
                     between(0.4, 1.0), between(0.5, 1.1), between(0.05, 0.4),
                     between(1.5, 2.2)});
  }

  SyntheticData out;
  for (std::size_t j = 0; j + 1 < n; j += 2) out.coupled_pairs.emplace_back(j, j + 1);
  std::vector<int> driver(n, -1);
  for (const auto& [d, f] : out.coupled_pairs) driver[f] = static_cast<int>(d);

  auto circular = [](double a, double b) {
    const double d = std::fabs(a - b);
    return std::min(d, 24.0 - d);
  };
  auto profile = [&](const NodeShape& s, int hour) {
    const double dm = circular(hour, s.morning);
    const double de = circular(hour, s.evening);
    const double night = (hour >= 1 && hour <= 5) ? 0.1 : 1.0;
    return night * (0.25 + s.morning_amp * std::exp(-dm * dm / 8.0) +
                    s.evening_amp * std::exp(-de * de / 4.5));
  };

  const auto vocab = default_weather_vocabulary();
  const double phi = 0.6;
  const double sigma = 0.12;

  out.flows.node_names.reserve(n);
  for (std::size_t j = 0; j < n; ++j) out.flows.node_names.push_back(synthetic_node_name(j));
  out.flows.values = ag::Matrix::Zero(static_cast<Index>(steps), static_cast<Index>(n));
  out.flows.interval_hours = 1.0;

  std::vector<double> noise(n, 0.0), prev(n, 0.0);
  std::size_t weather = 0;
  const auto origin = std::chrono::sys_days{spec.start};
  for (std::size_t t = 0; t < steps; ++t) {
    const Timestamp ts = origin + std::chrono::hours{static_cast<long>(t)};
    out.flows.timestamps.push_back(ts);
    const int hour = static_cast<int>(t % 24);
    const double day_of_year = static_cast<double>(t) / 24.0;

    if (unif(rng) > 0.92) weather = static_cast<std::size_t>(unif(rng) * vocab.size()) % vocab.size();
    const bool holiday = is_holiday(ts, spec.holidays);
    const bool weekend = is_weekend(ts);

    ExternalFactorRecord rec;
    rec.hour = hour;
    rec.temperature = 20.0 + 8.0 * std::sin(2.0 * std::numbers::pi * (day_of_year - 100.0) / 365.0) +
                      4.0 * std::sin(2.0 * std::numbers::pi * (hour - 9) / 24.0) + gauss(rng);
    rec.wind_speed = 2.0 + std::fabs(1.5 * gauss(rng));
    rec.humidity = std::clamp(75.0 + 10.0 * gauss(rng) + (weather >= 3 ? 12.0 : 0.0), 20.0, 100.0);
    rec.visibility = std::max(0.5, 12.0 - (weather >= 3 ? 5.0 : 0.0) - (weather == 5 ? 6.0 : 0.0) +
                                       gauss(rng));
    rec.weather = vocab[weather];
    rec.holiday = holiday;
    out.factors.push_back(rec);

    const double weather_factor = weather == 4 ? 0.8 : (weather == 3 ? 0.92 : 1.0);
    for (std::size_t j = 0; j < n; ++j) {
      double e = phi * prev[j] + sigma * gauss(rng);
      if (driver[j] >= 0) e += spec.coupling * prev[static_cast<std::size_t>(driver[j])];
      noise[j] = e;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto& s = shape[j];
      double v = s.level * profile(s, hour) * (weekend ? 1.0 + s.weekend : 1.0) *
                 (holiday ? s.holiday : 1.0) * weather_factor * (1.0 + noise[j]);
      out.flows.values(static_cast<Index>(t), static_cast<Index>(j)) = std::max(0.0, std::round(v));
    }
    prev = noise;
  }
  return out;
}

}  // namespace mmst
