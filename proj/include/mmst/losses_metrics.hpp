#pragma once

// Training losses (MAE, MSE, pinball, EPEL) and period-sliced evaluation.

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmst/autograd.hpp"
#include "mmst/calendar.hpp"

namespace mmst {

enum class LossKind { mae, mse, quantile, epel };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::mae: return "mae";
    case LossKind::mse: return "mse";
    case LossKind::quantile: return "quantile";
    case LossKind::epel: return "epel";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mae") return LossKind::mae;
  if (s == "mse") return LossKind::mse;
  if (s == "quantile") return LossKind::quantile;
  if (s == "epel") return LossKind::epel;
  throw ConfigError("unknown loss '" + s + "' (supported: mae, mse, quantile, epel)");
}

struct LossConfig {
  LossKind kind = LossKind::epel;
  double tau = 0.5;
  double p = 2.0;
  double q = 1.0;

  void validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("quantile tau must be in (0,1)");
    if (!(p > 0.0) || !(q > 0.0)) throw ConfigError("EPEL p and q must be > 0");
  }
};

namespace detail {
inline void check_same(const ag::Matrix& y, const ag::Matrix& yhat, const char* what) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Plain values

inline double mae(const ag::Matrix& y, const ag::Matrix& yhat) {
  detail::check_same(y, yhat, "mae");
  return (y - yhat).cwiseAbs().mean();
}

inline double mse(const ag::Matrix& y, const ag::Matrix& yhat) {
  detail::check_same(y, yhat, "mse");
  return (y - yhat).squaredNorm() / static_cast<double>(y.size());
}

inline double quantile_loss(const ag::Matrix& y, const ag::Matrix& yhat, double tau) {
  detail::check_same(y, yhat, "quantile_loss");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("quantile tau must be in (0,1)");
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double e = y(i) - yhat(i);
    s += e > 0.0 ? (1.0 - tau) * e : tau * (-e);
  }
  return s / static_cast<double>(y.size());
}

inline double epel(const ag::Matrix& y, const ag::Matrix& yhat, double p = 2.0, double q = 1.0) {
  detail::check_same(y, yhat, "epel");
  return ((p * y.array()).exp() * (q * (y - yhat).array().abs()).exp()).mean();
}

// ---------------------------------------------------------------------------
// Tape versions; y is data, yhat carries the gradient.

inline ag::Var mae(const ag::Var& y, const ag::Var& yhat) {
  return ag::mean(ag::abs(ag::sub(y, yhat)));
}

inline ag::Var mse(const ag::Var& y, const ag::Var& yhat) {
  return ag::mean(ag::square(ag::sub(y, yhat)));
}

// (1 - tau) relu(y - yhat) + tau relu(yhat - y)
inline ag::Var quantile_loss(const ag::Var& y, const ag::Var& yhat, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("quantile tau must be in (0,1)");
  auto e = ag::sub(y, yhat);
  auto under = ag::scale(ag::relu(e), 1.0 - tau);
  auto over = ag::scale(ag::relu(ag::scale(e, -1.0)), tau);
  return ag::mean(ag::add(under, over));
}

// mean exp(p y) exp(q |y - yhat|); the peak weight exp(p y) is data.
inline ag::Var epel(const ag::Var& y, const ag::Var& yhat, double p = 2.0, double q = 1.0) {
  auto weight = y.tape().constant((p * y.value().array()).exp().matrix());
  auto err = ag::exp(ag::scale(ag::abs(ag::sub(y, yhat)), q));
  return ag::mean(ag::mul(weight, err));
}

inline ag::Var loss(const LossConfig& cfg, const ag::Var& y, const ag::Var& yhat) {
  switch (cfg.kind) {
    case LossKind::mae: return mae(y, yhat);
    case LossKind::mse: return mse(y, yhat);
    case LossKind::quantile: return quantile_loss(y, yhat, cfg.tau);
    case LossKind::epel: return epel(y, yhat, cfg.p, cfg.q);
  }
  throw ConfigError("unknown loss kind");
}

inline double loss_value(const LossConfig& cfg, const ag::Matrix& y, const ag::Matrix& yhat) {
  switch (cfg.kind) {
    case LossKind::mae: return mae(y, yhat);
    case LossKind::mse: return mse(y, yhat);
    case LossKind::quantile: return quantile_loss(y, yhat, cfg.tau);
    case LossKind::epel: return epel(y, yhat, cfg.p, cfg.q);
  }
  throw ConfigError("unknown loss kind");
}

// ---------------------------------------------------------------------------
// Evaluation

inline const std::vector<std::string>& period_names() {
  static const std::vector<std::string> names = {"entire", "evening", "weekend", "holiday"};
  return names;
}

struct PeriodMetrics {
  std::size_t count = 0;  // forecast target steps in the period
  std::optional<double> mse;
  std::optional<double> mae;
  // Same errors in persons/hour; absent when no stats were supplied.
  std::optional<double> mse_denorm;
  std::optional<double> mae_denorm;
};

struct EvaluationReport {
  std::map<std::string, PeriodMetrics> periods;
  std::string note = "metrics average over all horizon steps and nodes, normalized scale";

  const PeriodMetrics& operator[](const std::string& period) const { return periods.at(period); }

  // Flat `{period}.{metric} = value` lines.
  void write_text(std::ostream& os) const {
    os << "# " << note << "\n";
    char buf[64];
    for (const auto& name : period_names()) {
      auto it = periods.find(name);
      if (it == periods.end()) continue;
      const auto& m = it->second;
      os << name << ".count = " << m.count << "\n";
      auto put = [&](const char* key, const std::optional<double>& v) {
        if (!v) return;
        std::snprintf(buf, sizeof buf, "%.10g", *v);
        os << name << "." << key << " = " << buf << "\n";
      };
      put("mse", m.mse);
      put("mae", m.mae);
      put("mse_denorm", m.mse_denorm);
      put("mae_denorm", m.mae_denorm);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["note"] = note;
    for (const auto& [name, m] : periods) {
      auto& p = j["periods"][name];
      p["count"] = m.count;
      if (m.mse) p["mse"] = *m.mse;
      if (m.mae) p["mae"] = *m.mae;
      if (m.mse_denorm) p["mse_denorm"] = *m.mse_denorm;
      if (m.mae_denorm) p["mae_denorm"] = *m.mae_denorm;
    }
    return j;
  }

  static EvaluationReport from_json(const nlohmann::json& j) {
    EvaluationReport r;
    r.note = j.value("note", r.note);
    for (const auto& [name, p] : j.at("periods").items()) {
      PeriodMetrics m;
      m.count = p.at("count").get<std::size_t>();
      if (p.contains("mse")) m.mse = p["mse"].get<double>();
      if (p.contains("mae")) m.mae = p["mae"].get<double>();
      if (p.contains("mse_denorm")) m.mse_denorm = p["mse_denorm"].get<double>();
      if (p.contains("mae_denorm")) m.mae_denorm = p["mae_denorm"].get<double>();
      r.periods[name] = m;
    }
    return r;
  }

  // Reads the flat text form back.
  static EvaluationReport from_text(std::istream& is) {
    EvaluationReport r;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find(" = ");
      const auto dot = line.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw DataError("report: malformed line '" + line + "'");
      }
      const std::string period = line.substr(0, dot);
      const std::string key = line.substr(dot + 1, eq - dot - 1);
      const double v = std::stod(line.substr(eq + 3));
      auto& m = r.periods[period];
      if (key == "count") m.count = static_cast<std::size_t>(v);
      else if (key == "mse") m.mse = v;
      else if (key == "mae") m.mae = v;
      else if (key == "mse_denorm") m.mse_denorm = v;
      else if (key == "mae_denorm") m.mae_denorm = v;
      else throw DataError("report: unknown metric '" + key + "'");
    }
    return r;
  }
};

// pred/truth are [rows x N]: one row per forecast target step, and
// target_steps[row] indexes the masks. scale[n] = max - min converts node n's
// normalized error to persons/hour (optional).
inline EvaluationReport evaluate(const ag::Matrix& pred, const ag::Matrix& truth,
                                 const std::vector<std::size_t>& target_steps,
                                 const PeriodMasks& masks,
                                 const std::vector<double>* scale = nullptr) {
  detail::check_same(truth, pred, "evaluate");
  if (target_steps.size() != static_cast<std::size_t>(pred.rows())) {
    throw ShapeError("evaluate: one target step per prediction row required");
  }
  EvaluationReport report;
  auto slice = [&](const std::string& name, auto&& include) {
    double se = 0.0, ae = 0.0, se_d = 0.0, ae_d = 0.0;
    std::size_t count = 0;
    std::size_t rows = 0;
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      const std::size_t step = target_steps[static_cast<std::size_t>(r)];
      if (!include(step)) continue;
      ++rows;
      for (Eigen::Index n = 0; n < pred.cols(); ++n) {
        const double e = truth(r, n) - pred(r, n);
        se += e * e;
        ae += std::fabs(e);
        if (scale != nullptr) {
          const double ed = e * (*scale)[static_cast<std::size_t>(n)];
          se_d += ed * ed;
          ae_d += std::fabs(ed);
        }
        ++count;
      }
    }
    PeriodMetrics m;
    m.count = rows;
    if (count > 0) {
      const double c = static_cast<double>(count);
      m.mse = se / c;
      m.mae = ae / c;
      if (scale != nullptr) {
        m.mse_denorm = se_d / c;
        m.mae_denorm = ae_d / c;
      }
    }
    report.periods[name] = m;
  };
  auto within = [&](const std::vector<bool>& mask) {
    return [&mask](std::size_t step) { return step < mask.size() && mask[step]; };
  };
  slice("entire", [](std::size_t) { return true; });
  slice("evening", within(masks.evening));
  slice("weekend", within(masks.weekend));
  slice("holiday", within(masks.holiday));
  return report;
}

}  // namespace mmst
