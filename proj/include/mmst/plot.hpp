#pragma once

// Minimal SVG charts: truth-vs-forecast lines per node and grouped bar
// charts of per-period errors (one bar per labelled report).

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmst/losses_metrics.hpp"

namespace mmst {

namespace svg_detail {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Frame {
  double width = 800, height = 360, left = 60, right = 20, top = 40, bottom = 50;
  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
};

inline void header(std::ostringstream& os, const Frame& f, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\""
     << f.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << escape(title) << "</text>\n";
}

inline void axes(std::ostringstream& os, const Frame& f, double ymin, double ymax) {
  const double x0 = f.left, y0 = f.top + f.plot_h();
  os << "<line x1=\"" << x0 << "\" y1=\"" << f.top << "\" x2=\"" << x0 << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 + f.plot_w() << "\" y2=\""
     << y0 << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    const double y = y0 - f.plot_h() * k / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << buf
       << "</text>\n";
  }
}

}  // namespace svg_detail

// Line chart of labelled series sharing an x axis (step index).
inline std::string line_chart_svg(const std::string& title,
                                  const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  using namespace svg_detail;
  Frame f;
  std::ostringstream os;
  header(os, f, title);
  double lo = 0.0, hi = 1.0;
  std::size_t len = 0;
  bool first = true;
  for (const auto& [name, s] : series) {
    len = std::max(len, s.size());
    for (double v : s) {
      if (first) {
        lo = hi = v;
        first = false;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi <= lo) hi = lo + 1.0;
  axes(os, f, lo, hi);
  const double dx = len > 1 ? f.plot_w() / static_cast<double>(len - 1) : 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i].second;
    os << "<polyline fill=\"none\" stroke-width=\"1.3\" stroke=\"" << palette(i) << "\" points=\"";
    for (std::size_t t = 0; t < s.size(); ++t) {
      const double x = f.left + dx * static_cast<double>(t);
      const double y = f.top + f.plot_h() * (1.0 - (s[t] - lo) / (hi - lo));
      os << num(x) << ',' << num(y) << ' ';
    }
    os << "\"/>\n";
    const double ly = f.height - 18;
    const double lx = f.left + 140.0 * static_cast<double>(i);
    os << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"10\" fill=\""
       << palette(i) << "\"/><text x=\"" << lx + 16 << "\" y=\"" << ly << "\">"
       << escape(series[i].first) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Grouped bars: one group per period, one bar per labelled report.
inline std::string period_bar_chart_svg(const std::string& title, const std::string& metric,
                                        const std::vector<std::pair<std::string, EvaluationReport>>& reports) {
  using namespace svg_detail;
  Frame f;
  std::ostringstream os;
  header(os, f, title);
  std::vector<std::string> periods;
  for (const auto& p : period_names()) {
    for (const auto& [label, r] : reports) {
      if (r.periods.count(p) != 0) {
        periods.push_back(p);
        break;
      }
    }
  }
  auto value = [&](const EvaluationReport& r, const std::string& p) {
    auto it = r.periods.find(p);
    if (it == r.periods.end()) return 0.0;
    const auto& v = metric == "mse" ? it->second.mse : it->second.mae;
    return v.value_or(0.0);
  };
  double hi = 0.0;
  for (const auto& [label, r] : reports) {
    for (const auto& p : periods) hi = std::max(hi, value(r, p));
  }
  if (hi <= 0.0) hi = 1.0;
  axes(os, f, 0.0, hi);
  const double group_w = f.plot_w() / static_cast<double>(std::max<std::size_t>(1, periods.size()));
  const double bar_w = 0.8 * group_w / static_cast<double>(std::max<std::size_t>(1, reports.size()));
  for (std::size_t g = 0; g < periods.size(); ++g) {
    const double gx = f.left + group_w * static_cast<double>(g) + 0.1 * group_w;
    os << "<g class=\"group\" data-period=\"" << periods[g] << "\">\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const double v = value(reports[i].second, periods[g]);
      const double h = f.plot_h() * v / hi;
      os << "<rect x=\"" << num(gx + bar_w * static_cast<double>(i)) << "\" y=\""
         << num(f.top + f.plot_h() - h) << "\" width=\"" << num(bar_w * 0.9) << "\" height=\""
         << num(h) << "\" fill=\"" << palette(i) << "\"/>\n";
    }
    os << "</g>\n<text x=\"" << num(gx + 0.4 * group_w) << "\" y=\"" << f.top + f.plot_h() + 16
       << "\" text-anchor=\"middle\">" << periods[g] << "</text>\n";
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const double lx = f.left + 110.0 * static_cast<double>(i);
    const double ly = f.height - 12;
    os << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"10\" fill=\""
       << palette(i) << "\"/><text x=\"" << lx + 16 << "\" y=\"" << ly << "\">"
       << escape(reports[i].first) << "</text>\n";
  }
  os << "<text x=\"14\" y=\"" << f.top + f.plot_h() / 2 << "\" transform=\"rotate(-90 14 "
     << f.top + f.plot_h() / 2 << ")\" text-anchor=\"middle\">" << metric << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace mmst
