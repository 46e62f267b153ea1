#pragma once

// External factors (hour, weather, holiday, ...) and their numeric encoding.

#include <array>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mmst/calendar.hpp"
#include "mmst/data.hpp"

namespace mmst {

struct ExternalFactorRecord {
  int hour = 0;
  double temperature = 0.0;  // degrees C
  double wind_speed = 0.0;
  double humidity = 0.0;
  double visibility = 0.0;
  std::string weather;
  bool holiday = false;
};

// Integer codes follow declaration order.
inline std::vector<std::string> default_weather_vocabulary() {
  return {"clear", "cloudy", "overcast", "light_rain", "heavy_rain", "fog"};
}

inline constexpr std::size_t kExternalColumns = 7;

// Train-split range of the four continuous factors, in column order
// temperature, wind_speed, humidity, visibility.
struct ExternalScaling {
  std::array<double, 4> min{};
  std::array<double, 4> max{};
};

struct EncodedExternal {
  ag::Matrix factors;  // T x 7
  ExternalScaling scaling;
};

// Columns: hour/23, temperature, wind_speed, humidity, visibility (min-max
// scaled), weather code, holiday flag.
inline EncodedExternal encode_external(const std::vector<ExternalFactorRecord>& records,
                                       const std::vector<std::string>& vocabulary,
                                       const std::optional<ExternalScaling>& scaling = {}) {
  auto continuous = [](const ExternalFactorRecord& r) {
    return std::array<double, 4>{r.temperature, r.wind_speed, r.humidity, r.visibility};
  };
  EncodedExternal out;
  if (scaling) {
    out.scaling = *scaling;
  } else {
    out.scaling.min.fill(std::numeric_limits<double>::infinity());
    out.scaling.max.fill(-std::numeric_limits<double>::infinity());
    for (const auto& r : records) {
      const auto v = continuous(r);
      for (std::size_t k = 0; k < 4; ++k) {
        out.scaling.min[k] = std::min(out.scaling.min[k], v[k]);
        out.scaling.max[k] = std::max(out.scaling.max[k], v[k]);
      }
    }
  }
  out.factors.resize(static_cast<Index>(records.size()), kExternalColumns);
  for (std::size_t t = 0; t < records.size(); ++t) {
    const auto& r = records[t];
    if (r.hour < 0 || r.hour > 23) {
      throw DataError("external factor row " + std::to_string(t + 1) + ": hour " +
                      std::to_string(r.hour) + " outside 0-23");
    }
    auto code = std::find(vocabulary.begin(), vocabulary.end(), r.weather);
    if (code == vocabulary.end()) {
      std::string vocab;
      for (const auto& w : vocabulary) vocab += (vocab.empty() ? "" : ", ") + w;
      throw DataError("external factor row " + std::to_string(t + 1) +
                      ": unknown weather '" + r.weather + "' (vocabulary: " + vocab + ")");
    }
    const auto row = static_cast<Index>(t);
    out.factors(row, 0) = r.hour / 23.0;
    const auto v = continuous(r);
    for (std::size_t k = 0; k < 4; ++k) {
      const double span = out.scaling.max[k] - out.scaling.min[k];
      out.factors(row, static_cast<Index>(k + 1)) =
          span > 0.0 ? (v[k] - out.scaling.min[k]) / span : 0.0;
    }
    out.factors(row, 5) = static_cast<double>(code - vocabulary.begin());
    out.factors(row, 6) = r.holiday ? 1.0 : 0.0;
  }
  return out;
}

// Header: timestamp,hour,temperature,wind_speed,humidity,visibility,weather,holiday
inline std::vector<ExternalFactorRecord> load_external_csv(const std::string& path,
                                                           std::vector<Timestamp>* stamps = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open external-factor file: " + path);
  static const std::vector<std::string> kHeader = {
      "timestamp", "hour", "temperature", "wind_speed",
      "humidity",  "visibility", "weather", "holiday"};
  std::string line;
  if (!std::getline(in, line) || csv::split_line(line) != kHeader) {
    throw DataError(path + ": expected header timestamp,hour,temperature,wind_speed,"
                           "humidity,visibility,weather,holiday");
  }
  std::vector<ExternalFactorRecord> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    auto cells = csv::split_line(line);
    if (cells.size() != kHeader.size()) {
      throw DataError(path + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected 8");
    }
    auto ts = parse_timestamp(cells[0]);
    if (!ts) throw DataError(path + ": row " + std::to_string(row) + ": bad timestamp");
    if (stamps != nullptr) stamps->push_back(*ts);
    auto number = [&](std::size_t c) {
      auto v = csv::parse_double(cells[c]);
      if (!v) {
        throw DataError(path + ": row " + std::to_string(row) + ", column " +
                        kHeader[c] + ": missing or non-numeric value");
      }
      return *v;
    };
    ExternalFactorRecord r;
    r.hour = static_cast<int>(number(1));
    r.temperature = number(2);
    r.wind_speed = number(3);
    r.humidity = number(4);
    r.visibility = number(5);
    r.weather = cells[6];
    const auto& h = cells[7];
    if (h == "1" || h == "true") {
      r.holiday = true;
    } else if (h == "0" || h == "false") {
      r.holiday = false;
    } else {
      throw DataError(path + ": row " + std::to_string(row) + ", column holiday: '" + h +
                      "' is not 0/1/true/false");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_external_csv(std::ostream& out, const std::vector<Timestamp>& stamps,
                               const std::vector<ExternalFactorRecord>& records) {
  out << "timestamp,hour,temperature,wind_speed,humidity,visibility,weather,holiday\n";
  char buf[160];
  for (std::size_t t = 0; t < records.size(); ++t) {
    const auto& r = records[t];
    std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g,%.17g,%.17g,", format_timestamp(stamps[t]).c_str(),
                  r.hour, r.temperature, r.wind_speed, r.humidity, r.visibility);
    out << buf << r.weather << ',' << (r.holiday ? 1 : 0) << '\n';
  }
}

}  // namespace mmst
