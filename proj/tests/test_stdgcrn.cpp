#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mmst/gradcheck.hpp"
#include "mmst/stdgcrn.hpp"
#include "test_util.hpp"

using namespace mmst;
using testutil::random_matrix;

namespace {

GraphRecurrentConfig tiny(Index nodes, Index c_in, Index hidden, Index embed) {
  GraphRecurrentConfig cfg;
  cfg.nodes = nodes;
  cfg.input_channels = c_in;
  cfg.hidden = hidden;
  cfg.node_embed = embed;
  return cfg;
}

void set(ParameterStore& store, const std::string& name, const Matrix& m) {
  store[store.slot(name)].value = m;
}

// Kernel rebuilt from the dynamic embedding with plain Eigen, one window at a time.
Matrix kernel_oracle(const Matrix& dyn, Index n, double eps) {
  Matrix g(dyn.rows(), n);
  for (Index b = 0; b < dyn.rows() / n; ++b) {
    const Matrix e = dyn.middleRows(b * n, n);
    const Matrix a = (e * e.transpose()).cwiseMax(0.0);
    const Eigen::VectorXd d = (a.rowwise().sum().array() + eps).rsqrt();
    g.middleRows(b * n, n) = Matrix::Identity(n, n) + d.asDiagonal() * a * d.asDiagonal();
  }
  return g;
}

}  // namespace

TEST(DynamicKernel, UnitEmbeddingGivesTwiceIdentity) {
  auto cfg = tiny(2, 1, 3, 2);
  cfg.degree_eps = 0.0;
  ParameterStore store;
  std::mt19937_64 rng(1);
  add_stdgcrn_params(store, "g", cfg, rng);
  const std::string p = gcrn_layer_prefix("g", 0);
  // tanh(40) rounds to 1, so E^d = I exactly.
  set(store, p + ".node_embed", 40.0 * Matrix::Identity(2, 2));
  set(store, p + ".mlp1.w", Matrix::Zero(1, 2));
  set(store, p + ".mlp1.b", Matrix::Zero(1, 2));
  set(store, p + ".mlp2.w", Matrix::Zero(2, 2));
  set(store, p + ".mlp2.b", Matrix::Ones(1, 2));
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const auto s = dynamic_kernel(ctx, p, cfg, ctx.constant(random_matrix(rng, 2, 1)));
  EXPECT_EQ(s.dyn_embed.value(), Matrix::Identity(2, 2));
  EXPECT_EQ(s.similarity.value(), Matrix::Identity(2, 2));
  EXPECT_EQ(s.kernel.value(), 2.0 * Matrix::Identity(2, 2));

  // With the default eps the diagonal is 1 + 1/(1 + 1e-6).
  cfg.degree_eps = 1e-6;
  ag::Tape t2;
  ForwardContext c2{t2, store, false, nullptr};
  const auto s2 = dynamic_kernel(c2, p, cfg, c2.constant(random_matrix(rng, 2, 1)));
  EXPECT_NEAR(s2.kernel.value()(0, 0), 2.0, 1.1e-6);
  EXPECT_EQ(s2.kernel.value()(0, 1), 0.0);
}

TEST(DynamicKernel, ZeroEmbeddingGivesIdentity) {
  auto cfg = tiny(4, 2, 3, 3);
  ParameterStore store;
  std::mt19937_64 rng(2);
  add_stdgcrn_params(store, "g", cfg, rng);
  set(store, "g.layer0.node_embed", Matrix::Zero(4, 3));
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const auto s = dynamic_kernel(ctx, "g.layer0", cfg, ctx.constant(random_matrix(rng, 8, 2)));
  Matrix eye(8, 4);
  eye << Matrix::Identity(4, 4), Matrix::Identity(4, 4);
  EXPECT_EQ(s.kernel.value(), eye);
}

TEST(DynamicKernel, MatchesOracleAndInvariants) {
  for (int trial = 0; trial < 10; ++trial) {
    auto cfg = tiny(5, 3, 4, 6);
    ParameterStore store;
    std::mt19937_64 rng(100 + static_cast<unsigned>(trial));
    add_stdgcrn_params(store, "g", cfg, rng);
    set(store, "g.layer0.node_embed", random_matrix(rng, 5, 6, -2.0, 2.0));
    ag::Tape tape;
    ForwardContext ctx{tape, store, false, nullptr};
    const Matrix chi = random_matrix(rng, 15, 3, -3.0, 3.0);
    const auto s = dynamic_kernel(ctx, "g.layer0", cfg, ctx.constant(chi));
    const Matrix& g = s.kernel.value();
    ASSERT_EQ(g.rows(), 15);
    ASSERT_EQ(g.cols(), 5);
    EXPECT_LE((g - kernel_oracle(s.dyn_embed.value(), 5, cfg.degree_eps)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(g.allFinite());
    for (Index b = 0; b < 3; ++b) {
      const Matrix blk = g.middleRows(b * 5, 5);
      EXPECT_LE((blk - blk.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_GE((blk - Matrix::Identity(5, 5)).minCoeff(), 0.0);
      EXPECT_GE(blk.diagonal().minCoeff(), 1.0);
      const Matrix a = s.similarity.value().middleRows(b * 5, 5);
      EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_LE(s.dyn_embed.value().cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(DynamicKernel, BinaryDegreeCountsPositiveEntries) {
  auto cfg = tiny(3, 1, 2, 2);
  cfg.degree = DegreeMode::binary;
  ParameterStore store;
  std::mt19937_64 rng(3);
  add_stdgcrn_params(store, "g", cfg, rng);
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const auto s = dynamic_kernel(ctx, "g.layer0", cfg, ctx.constant(random_matrix(rng, 3, 1)));
  const Matrix rect = s.similarity.value().cwiseMax(0.0);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(s.degree.value()(i, 0), static_cast<double>((rect.row(i).array() > 0.0).count()) + 1e-6);
  }
}

TEST(DynamicKernel, NonFiniteInputThrows) {
  auto cfg = tiny(3, 1, 2, 2);
  ParameterStore store;
  std::mt19937_64 rng(4);
  add_stdgcrn_params(store, "g", cfg, rng);
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  Matrix chi = Matrix::Zero(3, 1);
  chi(1, 0) = std::nan("");
  const std::size_t before = kernel_construction_counter();
  EXPECT_THROW(dynamic_kernel(ctx, "g.layer0", cfg, ctx.constant(chi)), NumericalError);
  EXPECT_EQ(kernel_construction_counter(), before);
}

TEST(GraphConv, IdentityLocalityAndLinearity) {
  std::mt19937_64 rng(5);
  ag::Tape tape;
  const Matrix feats = random_matrix(rng, 3, 2);
  const Matrix theta = random_matrix(rng, 2, 4);
  const Matrix bias = random_matrix(rng, 1, 4);
  auto f = tape.constant(feats);
  auto th = tape.constant(theta);
  auto b = tape.constant(bias);
  auto zero_b = tape.constant(Matrix::Zero(1, 4));

  const Matrix plain = graph_conv(Var{}, f, th, b, 3).value();
  const Matrix ident = graph_conv(tape.constant(Matrix::Identity(3, 3)), f, th, b, 3).value();
  EXPECT_LE((plain - ident).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((plain - ((feats * theta).rowwise() + bias.row(0))).cwiseAbs().maxCoeff(), 1e-15);

  Matrix g = random_matrix(rng, 3, 3);
  g.row(1).setZero();
  g(1, 1) = 2.0;
  Matrix feats2 = feats;
  feats2.row(0).array() += 1.0;
  feats2.row(2).array() -= 1.0;
  const Matrix o1 = graph_conv(tape.constant(g), f, th, b, 3).value();
  const Matrix o2 = graph_conv(tape.constant(g), tape.constant(feats2), th, b, 3).value();
  EXPECT_EQ(o1.row(1), o2.row(1));

  const Matrix single = graph_conv(tape.constant(g), f, th, zero_b, 3).value();
  const Matrix doubled = graph_conv(tape.constant(2.0 * g), f, th, zero_b, 3).value();
  EXPECT_LE((doubled - 2.0 * single).cwiseAbs().maxCoeff(), 1e-14);

  EXPECT_THROW(graph_conv(tape.constant(g), f, tape.constant(Matrix::Zero(3, 4)), b, 3), ShapeError);
}

TEST(RecurrentStep, ZeroParametersHalveTheState) {
  auto cfg = tiny(3, 2, 4, 3);
  ParameterStore store;
  std::mt19937_64 rng(6);
  add_stdgcrn_params(store, "g", cfg, rng);
  store.set_zero();
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const Matrix h0 = random_matrix(rng, 3, 4);
  const auto s = stdgcru_step(ctx, "g.layer0", cfg, ctx.constant(random_matrix(rng, 3, 2)), ctx.constant(h0));
  EXPECT_EQ(s.reset.value(), Matrix::Constant(3, 4, 0.5));
  EXPECT_EQ(s.update.value(), Matrix::Constant(3, 4, 0.5));
  EXPECT_EQ(s.candidate.value(), Matrix::Zero(3, 4));
  EXPECT_EQ(s.h.value(), 0.5 * h0);
}

TEST(RecurrentStep, GateRangesAndConvexity) {
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = tiny(4, 3, 5, 3);
    ParameterStore store;
    std::mt19937_64 rng(200 + static_cast<unsigned>(trial));
    add_stdgcrn_params(store, "g", cfg, rng);
    ag::Tape tape;
    ForwardContext ctx{tape, store, false, nullptr};
    const Matrix h0 = random_matrix(rng, 8, 5);
    const auto s = stdgcru_step(ctx, "g.layer0", cfg, ctx.constant(random_matrix(rng, 8, 3, -2.0, 2.0)),
                                ctx.constant(h0));
    EXPECT_GT(s.reset.value().minCoeff(), 0.0);
    EXPECT_LT(s.reset.value().maxCoeff(), 1.0);
    EXPECT_GT(s.update.value().minCoeff(), 0.0);
    EXPECT_LT(s.update.value().maxCoeff(), 1.0);
    EXPECT_LT(s.candidate.value().cwiseAbs().maxCoeff(), 1.0);
    const Matrix& c = s.candidate.value();
    const Matrix& h = s.h.value();
    EXPECT_TRUE((h.array() >= c.cwiseMin(h0).array() - 1e-15).all());
    EXPECT_TRUE((h.array() <= c.cwiseMax(h0).array() + 1e-15).all());
  }
}

TEST(RecurrentStep, LargeUpdateBiasTakesTheCandidate) {
  auto cfg = tiny(3, 1, 4, 2);
  ParameterStore store;
  std::mt19937_64 rng(7);
  add_stdgcrn_params(store, "g", cfg, rng);
  set(store, "g.layer0.b_z", Matrix::Constant(1, 4, 50.0));
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const auto s = stdgcru_step(ctx, "g.layer0", cfg, ctx.constant(random_matrix(rng, 3, 1)),
                              ctx.constant(Matrix::Zero(3, 4)));
  EXPECT_LE((s.h.value() - s.candidate.value()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(s.h.value().cwiseAbs().maxCoeff(), 1.0);
}

TEST(RecurrentStep, GradientMatchesFiniteDifferences) {
  auto cfg = tiny(3, 2, 4, 3);
  ParameterStore store;
  std::mt19937_64 rng(8);
  add_stdgcrn_params(store, "g", cfg, rng);
  const Matrix chi = random_matrix(rng, 3, 2);
  const Matrix h0 = random_matrix(rng, 3, 4);
  const Matrix proj = random_matrix(rng, 3, 4);
  const auto r = grad_check(
      store,
      [&](const ForwardContext& ctx) {
        auto s = stdgcru_step(ctx, "g.layer0", cfg, ctx.constant(chi), ctx.constant(h0));
        return ag::sum(ag::mul(s.h, ctx.constant(proj)));
      },
      1e-6);
  EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
  EXPECT_EQ(r.checked, stdgcrn_param_count(cfg));
}

TEST(Encode, ShapeDeterminismAndZeroParameters) {
  auto cfg = tiny(11, 1, 16, 4);
  ParameterStore store;
  std::mt19937_64 rng(9);
  add_stdgcrn_params(store, "g", cfg, rng);
  std::vector<Matrix> steps;
  for (int t = 0; t < 24; ++t) steps.push_back(random_matrix(rng, 11, 1, 0.0, 1.0));
  auto run = [&](const ParameterStore& ps) {
    ag::Tape tape;
    ForwardContext ctx{tape, ps, false, nullptr};
    std::vector<Var> in;
    for (const auto& m : steps) in.push_back(ctx.constant(m));
    std::vector<Matrix> out;
    for (const auto& v : stdgcrn_encode(ctx, "g", cfg, in)) out.push_back(v.value());
    return out;
  };
  const auto a = run(store);
  ASSERT_EQ(a.size(), 24u);
  EXPECT_EQ(a[0].rows(), 11);
  EXPECT_EQ(a[0].cols(), 16);
  EXPECT_EQ(a, run(store));
  store.set_zero();
  for (const auto& m : run(store)) EXPECT_EQ(m, Matrix::Zero(11, 16));
}

TEST(Encode, StackedLayersAndStaticGraph) {
  auto cfg = tiny(4, 2, 5, 3);
  cfg.layers = 2;
  cfg.dynamic_graph = false;
  ParameterStore store;
  std::mt19937_64 rng(10);
  add_stdgcrn_params(store, "g", cfg, rng);
  EXPECT_EQ(store.scalar_count(), stdgcrn_param_count(cfg));
  EXPECT_EQ(store.find("g.layer0.node_embed"), nullptr);
  EXPECT_NE(store.find("g.layer1.theta_h"), nullptr);
  EXPECT_EQ(store[store.slot("g.layer1.theta_r")].value.rows(), 10);

  const std::size_t before = kernel_construction_counter();
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  std::vector<Var> in;
  for (int t = 0; t < 6; ++t) in.push_back(ctx.constant(random_matrix(rng, 8, 2)));
  const auto out = stdgcrn_encode(ctx, "g", cfg, in);
  EXPECT_EQ(kernel_construction_counter(), before);
  EXPECT_EQ(out.back().rows(), 8);

  cfg.dynamic_graph = true;
  ParameterStore dyn;
  add_stdgcrn_params(dyn, "g", cfg, rng);
  // Slots are per store, so the dynamic run needs its own tape.
  ag::Tape t2;
  ForwardContext c2{t2, dyn, false, nullptr};
  std::vector<Var> in2;
  for (const auto& v : in) in2.push_back(c2.constant(v.value()));
  stdgcrn_encode(c2, "g", cfg, in2);
  EXPECT_EQ(kernel_construction_counter(), before + 12);
}

TEST(Encode, ParameterCountFormula) {
  GraphRecurrentConfig cfg = tiny(11, 1, 128, 16);
  // E [11x16], MLP 1->16->16, three gates over 129 inputs.
  const std::size_t expect = 11 * 16 + (16 + 16) + (256 + 16) + 3 * (129 * 128 + 128);
  EXPECT_EQ(stdgcrn_param_count(cfg), expect);
  ParameterStore store;
  std::mt19937_64 rng(11);
  add_stdgcrn_params(store, "g", cfg, rng);
  EXPECT_EQ(store.scalar_count(), expect);

  GraphRecurrentConfig bad = cfg;
  bad.nodes = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.degree_eps = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}
