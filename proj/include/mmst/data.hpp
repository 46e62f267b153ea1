#pragma once

// Flow dataset ingestion, min-max normalization, and sliding windows.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mmst/autograd.hpp"
#include "mmst/error.hpp"
#include "mmst/flow_tensor.hpp"

namespace mmst {

using ag::Index;
using Timestamp = std::chrono::sys_seconds;

// Accepts "YYYY-MM-DDTHH:MM[:SS]" or with a space separator.
inline std::optional<Timestamp> parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  std::string buf(text);
  char sep = 0;
  const int got = std::sscanf(buf.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d,
                              &sep, &h, &mi, &s);
  if (got < 6 || (sep != 'T' && sep != ' ')) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59) {
    return std::nullopt;
  }
  return std::chrono::sys_days{ymd} + std::chrono::hours{h} +
         std::chrono::minutes{mi} + std::chrono::seconds{s};
}

inline std::string format_timestamp(Timestamp ts) {
  const auto day = std::chrono::floor<std::chrono::days>(ts);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{ts - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

inline int hour_of(Timestamp ts) {
  const auto day = std::chrono::floor<std::chrono::days>(ts);
  return static_cast<int>(
      std::chrono::duration_cast<std::chrono::hours>(ts - day).count());
}

struct RawDataset {
  std::vector<Timestamp> timestamps;
  ag::Matrix values;  // T x N
  std::vector<std::string> node_names;
  double interval_hours = 1.0;

  std::size_t steps() const { return timestamps.size(); }
  std::size_t nodes() const { return node_names.size(); }

  void validate() const {
    if (steps() < 2) throw DataError("dataset needs at least 2 time steps");
    if (nodes() < 1) throw DataError("dataset needs at least 1 node");
    if (static_cast<std::size_t>(values.rows()) != steps() ||
        static_cast<std::size_t>(values.cols()) != nodes()) {
      throw DataError("value matrix shape does not match timestamps/nodes");
    }
    if (!values.allFinite()) throw DataError("dataset contains non-finite values");
    const auto spacing = timestamps[1] - timestamps[0];
    for (std::size_t t = 1; t < steps(); ++t) {
      if (timestamps[t] <= timestamps[t - 1]) {
        throw DataError("timestamps not strictly increasing at row " +
                        std::to_string(t + 1));
      }
      if (timestamps[t] - timestamps[t - 1] != spacing) {
        throw DataError("irregular timestamp spacing at row " + std::to_string(t + 1));
      }
    }
  }

  // Rows [start, start + count).
  RawDataset slice(std::size_t start, std::size_t count) const {
    RawDataset out;
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(start),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(start + count));
    out.values = values.middleRows(static_cast<Index>(start), static_cast<Index>(count));
    out.node_names = node_names;
    out.interval_hours = interval_hours;
    return out;
  }
};

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace csv

// Header: `timestamp,<node>,<node>,...`. Data rows are numbered from 1.
inline RawDataset parse_flow_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  if (!line.empty() && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  auto header = csv::split_line(line);
  if (header.size() < 2 || header[0] != "timestamp") {
    throw DataError(source + ": header must start with 'timestamp' followed by node columns");
  }
  RawDataset ds;
  ds.node_names.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    auto cells = csv::split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(source + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    auto ts = parse_timestamp(cells[0]);
    if (!ts) {
      throw DataError(source + ": row " + std::to_string(row) +
                      ", column timestamp: cannot parse '" + cells[0] + "'");
    }
    if (!ds.timestamps.empty()) {
      if (*ts <= ds.timestamps.back()) {
        throw DataError(source + ": row " + std::to_string(row) +
                        ": timestamp is not after the previous row");
      }
      if (ds.timestamps.size() >= 2 &&
          *ts - ds.timestamps.back() != ds.timestamps[1] - ds.timestamps[0]) {
        throw DataError(source + ": row " + std::to_string(row) +
                        ": timestamp spacing differs from the first interval");
      }
    }
    ds.timestamps.push_back(*ts);
    std::vector<double> vals;
    vals.reserve(ds.node_names.size());
    for (std::size_t c = 1; c < cells.size(); ++c) {
      auto v = csv::parse_double(cells[c]);
      if (!v) {
        throw DataError(source + ": row " + std::to_string(row) + ", column " +
                        ds.node_names[c - 1] + ": missing or non-numeric value '" +
                        cells[c] + "'");
      }
      vals.push_back(*v);
    }
    rows.push_back(std::move(vals));
  }
  if (rows.size() < 2) throw DataError(source + ": need at least 2 data rows");
  ds.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(ds.node_names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      ds.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    }
  }
  ds.interval_hours =
      std::chrono::duration<double, std::ratio<3600>>(ds.timestamps[1] - ds.timestamps[0])
          .count();
  return ds;
}

inline RawDataset load_flow_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open flow file: " + path);
  return parse_flow_csv(in, path);
}

inline void write_flow_csv(std::ostream& out, const RawDataset& ds) {
  out << "timestamp";
  for (const auto& n : ds.node_names) out << ',' << n;
  out << '\n';
  char buf[64];
  for (std::size_t t = 0; t < ds.steps(); ++t) {
    out << format_timestamp(ds.timestamps[t]);
    for (std::size_t n = 0; n < ds.nodes(); ++n) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    ds.values(static_cast<Index>(t), static_cast<Index>(n)));
      out << ',' << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizationStats {
  std::vector<double> min;
  std::vector<double> max;

  bool degenerate(std::size_t node) const { return !(max[node] > min[node]); }

  double normalize(double x, std::size_t node) const {
    if (degenerate(node)) return 0.0;
    return (x - min[node]) / (max[node] - min[node]);
  }

  double denormalize(double y, std::size_t node) const {
    if (degenerate(node)) return min[node];
    return y * (max[node] - min[node]) + min[node];
  }
};

struct NormalizedFlow {
  FlowTensor tensor;  // T x N x 1
  NormalizationStats stats;
  std::vector<std::string> warnings;
};

inline NormalizationStats fit_minmax(const RawDataset& ds) {
  NormalizationStats st;
  for (Index n = 0; n < ds.values.cols(); ++n) {
    st.min.push_back(ds.values.col(n).minCoeff());
    st.max.push_back(ds.values.col(n).maxCoeff());
  }
  return st;
}

// Without stats: fit per node on ds. With stats: apply as given.
// A node with max == min maps to zeros and records a warning.
inline NormalizedFlow minmax_normalize(const RawDataset& ds,
                                       const std::optional<NormalizationStats>& stats = {}) {
  NormalizedFlow out;
  out.stats = stats ? *stats : fit_minmax(ds);
  if (out.stats.min.size() != ds.nodes() || out.stats.max.size() != ds.nodes()) {
    throw DataError("normalization stats cover " + std::to_string(out.stats.min.size()) +
                    " nodes, dataset has " + std::to_string(ds.nodes()));
  }
  out.tensor = FlowTensor(ds.steps(), ds.nodes(), 1);
  for (std::size_t n = 0; n < ds.nodes(); ++n) {
    if (out.stats.degenerate(n)) {
      out.warnings.push_back("degenerate node '" + ds.node_names[n] +
                             "': max == min, mapped to zeros");
    }
    for (std::size_t t = 0; t < ds.steps(); ++t) {
      out.tensor(t, n, 0) = out.stats.normalize(
          ds.values(static_cast<Index>(t), static_cast<Index>(n)), n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windows

struct WindowPair {
  std::size_t start = 0;  // first input step
  FlowTensor input;       // [P x N x C], steps [start, start + P)
  FlowTensor target;      // [Q x N x C], steps [start + P, start + P + Q)
};

inline std::size_t window_count(std::size_t steps, std::size_t history,
                                std::size_t horizon, std::size_t stride = 1) {
  if (history < 1 || horizon < 1 || stride < 1) {
    throw ConfigError("window sizes and stride must be positive");
  }
  if (history + horizon > steps) {
    throw DataError("history (" + std::to_string(history) + ") + horizon (" +
                    std::to_string(horizon) + ") exceeds series length " +
                    std::to_string(steps));
  }
  return (steps - history - horizon) / stride + 1;
}

inline std::vector<WindowPair> make_windows(const FlowTensor& x, std::size_t history,
                                            std::size_t horizon, std::size_t stride = 1) {
  const std::size_t count = window_count(x.time(), history, horizon, stride);
  std::vector<WindowPair> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = k * stride;
    out.push_back({i, x.slice_time(i, history), x.slice_time(i + history, horizon)});
  }
  return out;
}

// Chronological split point: the first `train_fraction` of steps train.
inline std::size_t split_index(std::size_t steps, double train_fraction = 0.8) {
  return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(steps)));
}

}  // namespace mmst
