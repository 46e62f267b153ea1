#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "mmst/losses_metrics.hpp"
#include "test_util.hpp"

using namespace mmst;
using ag::Index;
using ag::Matrix;
using testutil::random_matrix;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

double epel_value(double y, double yhat) { return epel(row({y}), row({yhat})); }

std::vector<Timestamp> hourly(const std::string& start, std::size_t count) {
  std::vector<Timestamp> out;
  const Timestamp t0 = *parse_timestamp(start);
  for (std::size_t i = 0; i < count; ++i) out.push_back(t0 + std::chrono::hours(i));
  return out;
}

}  // namespace

TEST(PointLosses, HandValues) {
  const Matrix y = row({0, 1});
  const Matrix yh = row({1, 0});
  EXPECT_EQ(mae(y, y), 0.0);
  EXPECT_EQ(mse(y, y), 0.0);
  EXPECT_EQ(mae(y, yh), 1.0);
  EXPECT_EQ(mse(y, yh), 1.0);
  EXPECT_EQ(quantile_loss(y, y, 0.3), 0.0);
  EXPECT_NEAR(quantile_loss(row({1}), row({0}), 0.9), 0.1, 1e-15);
  EXPECT_NEAR(quantile_loss(row({0}), row({1}), 0.9), 0.9, 1e-15);
  // Equal errors: mse is exactly mae squared.
  EXPECT_DOUBLE_EQ(mse(row({0, 0, 0}), row({0.3, -0.3, 0.3})), std::pow(mae(row({0, 0, 0}), row({0.3, -0.3, 0.3})), 2));
  EXPECT_THROW(mae(y, row({1})), ShapeError);
  EXPECT_THROW(quantile_loss(y, yh, 1.0), ConfigError);
}

TEST(PointLosses, MedianPinballIsHalfMae) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Matrix y = random_matrix(rng, 3, 7);
    const Matrix yh = random_matrix(rng, 3, 7);
    EXPECT_NEAR(quantile_loss(y, yh, 0.5), 0.5 * mae(y, yh), 1e-15);
    EXPECT_GE(quantile_loss(y, yh, 0.1), 0.0);
  }
}

TEST(Epel, HandValues) {
  EXPECT_NEAR(epel_value(0.0, 0.0), 1.0, 1e-9);
  EXPECT_NEAR(epel_value(1.0, 1.0), 7.38905609893065, 1e-9);
  EXPECT_NEAR(epel_value(0.5, 0.3), 3.3201169227365472, 1e-9);
  EXPECT_NEAR(epel(row({0.5}), row({0.3}), 1.0, 2.0), std::exp(0.5 + 0.4), 1e-12);
}

TEST(Epel, MinimumAndPeakWeighting) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double y = u(rng);
    const double yh = u(rng);
    EXPECT_GE(epel_value(y, yh), std::exp(2.0 * y));
    EXPECT_DOUBLE_EQ(epel_value(y, y), std::exp(2.0 * y));
    // Equal error at two levels: ratio exp(p (y1 - y2)).
    const double e = 0.05 + 0.1 * u(rng);
    const double y1 = y, y2 = u(rng);
    EXPECT_NEAR(epel_value(y1, y1 + e) / epel_value(y2, y2 - e), std::exp(2.0 * (y1 - y2)), 1e-12);
    EXPECT_LT(epel_value(y, y + 0.1), epel_value(y, y + 0.2));
  }
}

TEST(Epel, GradientMatchesFiniteDifferencesAwayFromZero) {
  std::mt19937_64 rng(3);
  const Matrix y = random_matrix(rng, 4, 5, 0.0, 1.0);
  Matrix yh = random_matrix(rng, 4, 5, 0.0, 1.0);
  yh(0, 0) = y(0, 0);
  ag::Tape tape;
  auto vy = tape.constant(y);
  auto vh = tape.variable(yh);
  tape.backward(epel(vy, vh));
  const Matrix g = vh.grad();
  EXPECT_EQ(g(0, 0), 0.0);  // subgradient at zero error
  const double step = 1e-6;
  for (Index k = 1; k < yh.size(); ++k) {
    Matrix up = yh, down = yh;
    up(k) += step;
    down(k) -= step;
    const double numeric = (epel(y, up) - epel(y, down)) / (2.0 * step);
    EXPECT_LE(std::fabs(g(k) - numeric) / std::fabs(numeric), 1e-6) << k;
  }
}

TEST(Epel, TapeMatchesPlainValues) {
  std::mt19937_64 rng(4);
  const Matrix y = random_matrix(rng, 3, 4, 0.0, 1.0);
  const Matrix yh = random_matrix(rng, 3, 4, 0.0, 1.0);
  ag::Tape tape;
  auto vy = tape.constant(y);
  auto vh = tape.constant(yh);
  for (auto kind : {LossKind::mae, LossKind::mse, LossKind::quantile, LossKind::epel}) {
    LossConfig cfg;
    cfg.kind = kind;
    cfg.tau = 0.3;
    EXPECT_NEAR(loss(cfg, vy, vh).scalar(), loss_value(cfg, y, yh), 1e-14) << to_string(kind);
  }
}

TEST(LossConfig, ParsingAndValidation) {
  EXPECT_EQ(parse_loss_kind("epel"), LossKind::epel);
  EXPECT_EQ(parse_loss_kind("quantile"), LossKind::quantile);
  try {
    parse_loss_kind("huber");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("mae, mse, quantile, epel"), std::string::npos);
  }
  LossConfig c;
  EXPECT_EQ(c.kind, LossKind::epel);
  EXPECT_EQ(c.p, 2.0);
  EXPECT_EQ(c.q, 1.0);
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.tau = 0.5;
  c.q = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Evaluate, PerfectPredictionAndHalfMask) {
  PeriodMasks masks;
  masks.evening = {true, true, false, false};
  masks.weekend = {false, false, false, false};
  masks.holiday = {false, true, false, true};
  const Matrix truth = Matrix::Zero(4, 2);
  const std::vector<std::size_t> steps = {0, 1, 2, 3};
  const auto perfect = evaluate(truth, truth, steps, masks);
  for (const auto& name : {"entire", "evening", "holiday"}) {
    EXPECT_EQ(*perfect[name].mse, 0.0);
    EXPECT_EQ(*perfect[name].mae, 0.0);
  }
  EXPECT_EQ(perfect["weekend"].count, 0u);
  EXPECT_FALSE(perfect["weekend"].mse.has_value());

  Matrix pred = Matrix::Zero(4, 2);
  pred.topRows(2).setOnes();
  const std::vector<double> scale = {10.0, 100.0};
  const auto r = evaluate(pred, truth, steps, masks, &scale);
  EXPECT_DOUBLE_EQ(*r["entire"].mae, 0.5);
  EXPECT_DOUBLE_EQ(*r["evening"].mae, 1.0);
  EXPECT_DOUBLE_EQ(*r["holiday"].mse, 0.5);
  EXPECT_EQ(r["entire"].count, 4u);
  EXPECT_EQ(r["evening"].count, 2u);
  EXPECT_DOUBLE_EQ(*r["evening"].mae_denorm, 55.0);
  EXPECT_DOUBLE_EQ(*r["evening"].mse_denorm, (100.0 + 10000.0) / 2.0);

  EXPECT_THROW(evaluate(pred, truth, {0, 1}, masks), ShapeError);
}

TEST(Evaluate, EveningCountIsFourPerDay) {
  const std::size_t days = 9;
  const auto ts = hourly("2023-03-01T00:00:00", days * 24);
  const auto masks = build_period_masks(ts);
  std::vector<std::size_t> steps(ts.size());
  for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = i;
  const Matrix z = Matrix::Zero(static_cast<Index>(ts.size()), 3);
  const auto r = evaluate(z, z, steps, masks);
  EXPECT_EQ(r["evening"].count, 4 * days);
  EXPECT_EQ(r["entire"].count, 24 * days);
  // 2023-03-01 is a Wednesday: the 4th and 5th are the weekend.
  EXPECT_EQ(r["weekend"].count, 48u);
}

TEST(Report, TextAndJsonRoundTrip) {
  EvaluationReport r;
  PeriodMetrics m;
  m.count = 12;
  m.mse = 0.00123456789;
  m.mae = 0.0321;
  m.mse_denorm = 123.5;
  m.mae_denorm = 8.25;
  r.periods["entire"] = m;
  PeriodMetrics empty;
  r.periods["holiday"] = empty;

  std::stringstream ss;
  r.write_text(ss);
  EXPECT_NE(ss.str().find("entire.mse = 0.00123456789"), std::string::npos);
  const auto back = EvaluationReport::from_text(ss);
  EXPECT_EQ(back["entire"].count, 12u);
  EXPECT_DOUBLE_EQ(*back["entire"].mse, 0.00123456789);
  EXPECT_DOUBLE_EQ(*back["entire"].mae_denorm, 8.25);
  EXPECT_EQ(back["holiday"].count, 0u);
  EXPECT_FALSE(back["holiday"].mae.has_value());

  const auto j = EvaluationReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(*j["entire"].mse, *m.mse);
  EXPECT_EQ(j.note, r.note);

  std::stringstream bad("entire.rmse = 1\n");
  EXPECT_THROW(EvaluationReport::from_text(bad), DataError);
  std::stringstream garbage("nonsense\n");
  EXPECT_THROW(EvaluationReport::from_text(garbage), DataError);
}
