#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mmst/gradcheck.hpp"
#include "mmst/temporal_enhance.hpp"
#include "test_util.hpp"

using namespace mmst;
using testutil::random_matrix;

namespace {

TcnStackConfig small_tcn(std::size_t blocks) {
  TcnStackConfig cfg;
  cfg.num_blocks = blocks;
  cfg.dropout = 0.0;
  return cfg;
}

Matrix run_enhance(const ParameterStore& store, const TcnStackConfig& cfg, const Matrix& x) {
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  return history_enhance(ctx, "tcn", cfg, tape.constant(x)).value();
}

}  // namespace

TEST(TcnConfig, KernelAndDilationSchedule) {
  for (std::size_t b = 1; b <= 12; ++b) {
    EXPECT_EQ(TcnStackConfig::kernel_size(b), static_cast<Index>(2 * b + 1));
    EXPECT_GE(TcnStackConfig::kernel_size(b), 3);
  }
  EXPECT_EQ(TcnStackConfig::dilation(0), 1);
  EXPECT_EQ(TcnStackConfig::dilation(1), 2);
  EXPECT_EQ(TcnStackConfig::dilation(3), 8);
  EXPECT_EQ(PeakStackConfig::window(1), 3u);
  EXPECT_EQ(PeakStackConfig::window(6), 13u);

  TcnStackConfig bad;
  bad.dropout = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TcnStackConfig{};
  bad.num_blocks = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TcnConfig, ReceptiveFieldOfThreeDilatedLayers) {
  EXPECT_EQ(receptive_field({2, 2, 2}, {1, 2, 4}), 8);
  EXPECT_EQ(receptive_field({3, 3}, {1, 2}), 7);
}

TEST(DilatedConv, HandExamples) {
  EXPECT_EQ(dilated_causal_conv({1, 2, 3, 4}, {1, 1}, 1), (std::vector<double>{1, 3, 5, 7}));
  EXPECT_EQ(dilated_causal_conv({1, 2, 3, 4}, {1, 1}, 2), (std::vector<double>{1, 2, 4, 6}));
  EXPECT_EQ(dilated_causal_conv({1, 2, 3, 4}, {1}, 3), (std::vector<double>{1, 2, 3, 4}));
}

TEST(DilatedConv, MatchesDirectSum) {
  std::mt19937_64 rng(3);
  const Matrix s = random_matrix(rng, 20, 1);
  const Matrix w = random_matrix(rng, 5, 1);
  const std::vector<double> seq(s.data(), s.data() + 20);
  const std::vector<double> wt(w.data(), w.data() + 5);
  for (Index d : {1, 2, 3}) {
    const auto out = dilated_causal_conv(seq, wt, d);
    for (Index t = 0; t < 20; ++t) {
      double ref = 0.0;
      for (Index i = 0; i < 5; ++i) {
        if (t - d * i >= 0) ref += seq[static_cast<std::size_t>(t - d * i)] * wt[static_cast<std::size_t>(i)];
      }
      EXPECT_NEAR(out[static_cast<std::size_t>(t)], ref, 1e-14);
    }
  }
}

TEST(DcBlock, ZeroWeightsGiveZeros) {
  ParameterStore store;
  std::mt19937_64 rng(1);
  add_tcn_params(store, "tcn", small_tcn(1), 1, rng);
  store.set_zero();
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const Matrix x = random_matrix(rng, 8, 1);
  const Matrix y = dc_block(ctx, tcn_layer_name("tcn", 1, 0), tape.constant(x), 1, 0.0).value();
  EXPECT_EQ(y, Matrix::Zero(8, 1));
}

TEST(DcBlock, OutputNonNegativeAndEvalIgnoresDropout) {
  ParameterStore store;
  std::mt19937_64 rng(2);
  add_tcn_params(store, "tcn", small_tcn(2), 3, rng);
  const Matrix x = random_matrix(rng, 16, 3);
  const std::string name = tcn_layer_name("tcn", 2, 1);
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const Matrix a = dc_block(ctx, name, tape.constant(x), 2, 0.0).value();
  const Matrix b = dc_block(ctx, name, tape.constant(x), 2, 0.5).value();
  EXPECT_EQ(a, b);
  EXPECT_GE(a.minCoeff(), 0.0);
  EXPECT_EQ(a.rows(), 16);
}

TEST(TcnBlock, ZeroParametersAreExactIdentity) {
  ParameterStore store;
  std::mt19937_64 rng(4);
  const auto cfg = small_tcn(12);
  add_tcn_params(store, "tcn", cfg, 5, rng);
  store.set_zero();
  const Matrix x = random_matrix(rng, 24, 5);
  const Matrix out = run_enhance(store, cfg, x);
  ASSERT_EQ(out.rows(), 24 * 5);
  ASSERT_EQ(out.cols(), 12);
  for (Index t = 0; t < 24; ++t) {
    for (Index j = 0; j < 5; ++j) {
      for (Index c = 0; c < 12; ++c) EXPECT_EQ(out(t * 5 + j, c), x(t, j));
    }
  }
}

TEST(TcnBlock, FutureInputsDoNotReachThePast) {
  ParameterStore store;
  std::mt19937_64 rng(5);
  const auto cfg = small_tcn(4);
  add_tcn_params(store, "tcn", cfg, 2, rng);
  Matrix x = random_matrix(rng, 16, 2, 0.0, 1.0);
  const Matrix base = run_enhance(store, cfg, x);
  for (Index cut : {3, 9, 15}) {
    Matrix y = x;
    for (Index t = cut; t < 16; ++t) y.row(t) += Eigen::RowVector2d(5.0, -3.0);
    const Matrix out = run_enhance(store, cfg, y);
    EXPECT_EQ(out.topRows(cut * 2), base.topRows(cut * 2));
    EXPECT_NE(out.row(cut * 2), base.row(cut * 2));
  }
}

TEST(TcnBlock, NodesAreProcessedIndependently) {
  ParameterStore store;
  std::mt19937_64 rng(6);
  const auto cfg = small_tcn(3);
  add_tcn_params(store, "tcn", cfg, 1, rng);
  const Matrix x = random_matrix(rng, 12, 4, 0.0, 1.0);
  Matrix y = x;
  y.col(2).array() += 0.7;
  const Matrix a = run_enhance(store, cfg, x);
  const Matrix b = run_enhance(store, cfg, y);
  for (Index t = 0; t < 12; ++t) {
    for (Index j = 0; j < 4; ++j) {
      if (j != 2) { EXPECT_EQ(a.row(t * 4 + j), b.row(t * 4 + j)); }
    }
  }
}

TEST(TcnBlock, GradientMatchesFiniteDifferences) {
  ParameterStore store;
  std::mt19937_64 rng(7);
  const auto cfg = small_tcn(2);
  add_tcn_params(store, "tcn", cfg, 1, rng);
  // Positive biases keep both ReLU layers alive so every weight is exercised.
  for (auto& p : store) {
    if (p.name.ends_with(".b")) p.value = p.value.cwiseAbs().array() + 0.1;
  }
  const Matrix x = random_matrix(rng, 8, 1, 0.0, 1.0);
  const Matrix proj = random_matrix(rng, 8, 1);
  for (std::size_t block : {1u, 2u}) {
    const auto r = grad_check(
        store,
        [&](const ForwardContext& ctx) {
          return ag::sum(ag::mul(tcn_block(ctx, "tcn", cfg, block, ctx.constant(x)), ctx.constant(proj)));
        },
        1e-6);
    EXPECT_LE(r.max_relative_error, 1e-4) << block << " " << r.worst_parameter << "[" << r.worst_index << "]";
    EXPECT_GT(r.max_abs_gradient, 0.0);
  }
}

TEST(TcnBlock, ParameterCount) {
  ParameterStore store;
  std::mt19937_64 rng(8);
  TcnStackConfig cfg;
  add_tcn_params(store, "tcn", cfg, 3, rng);
  EXPECT_EQ(store.scalar_count(), tcn_param_count(cfg, 3));
  // Per block: 2 layers of (k weights + scale + bias), k = 2b+1.
  std::size_t expect = 0;
  for (std::size_t b = 1; b <= 12; ++b) expect += 2 * (2 * b + 1 + 2);
  EXPECT_EQ(tcn_param_count(cfg, 1), expect);
  // Weight norm starts at the column norm, so the effective kernel is v.
  const auto& v = store[store.slot(tcn_layer_name("tcn", 3, 1) + ".v")].value;
  const auto& g = store[store.slot(tcn_layer_name("tcn", 3, 1) + ".g")].value;
  EXPECT_EQ(v.rows(), 7);
  for (Index c = 0; c < 3; ++c) EXPECT_NEAR(g(0, c), v.col(c).norm(), 1e-15);
}

TEST(HistoryEnhance, FlowTensorShapeAndZeroInit) {
  ParameterStore store;
  std::mt19937_64 rng(9);
  TcnStackConfig cfg;
  add_tcn_params(store, "tcn", cfg, 1, rng);
  FlowTensor x(24, 3, 1);
  for (std::size_t t = 0; t < 24; ++t) {
    for (std::size_t n = 0; n < 3; ++n) x(t, n, 0) = 0.1 * static_cast<double>(t) + static_cast<double>(n);
  }
  const FlowTensor out = history_enhance(x, cfg, store, "tcn");
  EXPECT_EQ(out.time(), 24u);
  EXPECT_EQ(out.nodes(), 3u);
  EXPECT_EQ(out.channels(), 12u);

  store.set_zero();
  const FlowTensor id = history_enhance(x, cfg, store, "tcn");
  for (std::size_t c = 0; c < 12; ++c) EXPECT_EQ(id.series(1, c), x.series(1, 0));

  EXPECT_THROW(history_enhance(FlowTensor(4, 2, 2), cfg, store, "tcn"), ShapeError);
}

TEST(MaxPool, HandExamples) {
  EXPECT_EQ(causal_max_pool({0, 5, 0, 0}, 3), (std::vector<double>{0, 5, 5, 5}));
  EXPECT_EQ(causal_max_pool({0, 5, 0, 0, 0}, 3), (std::vector<double>{0, 5, 5, 5, 0}));
  EXPECT_EQ(causal_max_pool({3, 1, 2}, 1), (std::vector<double>{3, 1, 2}));
  // Replicate-left padding keeps early outputs at the first value.
  EXPECT_EQ(causal_max_pool({4, 1, 1, 1}, 5), (std::vector<double>{4, 4, 4, 4}));
}

TEST(MaxPool, Properties) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(24), y(24), inc(24);
    double acc = 0.0;
    for (std::size_t t = 0; t < 24; ++t) {
      x[t] = u(rng);
      y[t] = x[t] + u(rng);
      acc += u(rng);
      inc[t] = acc;
    }
    for (std::size_t w : {1u, 3u, 7u, 13u}) {
      const auto px = causal_max_pool(x, w);
      const auto py = causal_max_pool(y, w);
      ASSERT_EQ(px.size(), x.size());
      EXPECT_EQ(causal_max_pool(inc, w), inc);
      for (std::size_t t = 0; t < 24; ++t) {
        EXPECT_GE(px[t], x[t]);
        EXPECT_LE(px[t], py[t]);
      }
      // Causality: truncating the future changes nothing before it.
      const std::vector<double> head(x.begin(), x.begin() + 10);
      const auto ph = causal_max_pool(head, w);
      EXPECT_TRUE(std::equal(ph.begin(), ph.end(), px.begin()));
    }
  }
}

TEST(PeakAmplify, ChannelLayout) {
  FlowTensor x(10, 2, 2);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : x.data()) v = u(rng);
  PeakStackConfig cfg;
  const FlowTensor out = peak_amplify(x, cfg);
  ASSERT_EQ(out.channels(), 12u);
  ASSERT_EQ(out.time(), 10u);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(out.series(n, c * 6 + i), causal_max_pool(x.series(n, c), 2 * (i + 1) + 1));
      }
    }
  }
  PeakStackConfig bad;
  bad.num_blocks = 0;
  EXPECT_THROW(peak_amplify(x, bad), ConfigError);
}
