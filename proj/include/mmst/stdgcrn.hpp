#pragma once

// Spatial-temporal dynamic graph convolutional recurrent network: a GRU-style
// cell whose gate transforms are graph convolutions under a kernel rebuilt
// from the step input at every step.
//
// A minibatch of B windows is carried as [B*N x C] matrices (row b*N + n),
// and per-window kernels as [B*N x N] blocks.

#include <atomic>
#include <string>
#include <vector>

#include "mmst/context.hpp"

namespace mmst {

enum class DegreeMode { weighted, binary };

struct GraphRecurrentConfig {
  Index nodes = 0;
  Index input_channels = 1;
  Index hidden = 128;    // F
  Index node_embed = 16; // L
  std::size_t layers = 1;
  bool dynamic_graph = true;
  DegreeMode degree = DegreeMode::weighted;
  double degree_eps = 1e-6;

  Index layer_input(std::size_t layer) const { return layer == 0 ? input_channels : hidden; }

  void validate() const {
    if (nodes < 1 || input_channels < 1 || hidden < 1 || node_embed < 1 || layers < 1) {
      throw ConfigError("stdgcrn: nodes, channels, hidden, node_embed and layers must be >= 1");
    }
    if (!(degree_eps >= 0.0)) throw ConfigError("stdgcrn: degree_eps must be >= 0");
  }
};

inline std::string gcrn_layer_prefix(const std::string& prefix, std::size_t layer) {
  return prefix + ".layer" + std::to_string(layer);
}

inline void add_stdgcrn_params(ParameterStore& store, const std::string& prefix,
                               const GraphRecurrentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = gcrn_layer_prefix(prefix, l);
    const Index c_in = cfg.layer_input(l);
    if (cfg.dynamic_graph) {
      store.add(p + ".node_embed", cfg.nodes, cfg.node_embed, static_cast<double>(cfg.node_embed), rng);
      add_linear(store, p + ".mlp1", c_in, cfg.node_embed, rng);
      add_linear(store, p + ".mlp2", cfg.node_embed, cfg.node_embed, rng);
    }
    const Index fan = cfg.hidden + c_in;
    for (const char* gate : {"r", "z", "h"}) {
      store.add(p + ".theta_" + gate, fan, cfg.hidden, static_cast<double>(fan), rng);
      store.add(p + ".b_" + gate, 1, cfg.hidden, static_cast<double>(fan), rng);
    }
  }
}

inline std::size_t stdgcrn_param_count(const GraphRecurrentConfig& cfg) {
  std::size_t n = 0;
  const auto f = static_cast<std::size_t>(cfg.hidden);
  const auto l = static_cast<std::size_t>(cfg.node_embed);
  for (std::size_t k = 0; k < cfg.layers; ++k) {
    const auto c = static_cast<std::size_t>(cfg.layer_input(k));
    if (cfg.dynamic_graph) {
      n += static_cast<std::size_t>(cfg.nodes) * l + (c * l + l) + (l * l + l);
    }
    n += 3 * ((f + c) * f + f);
  }
  return n;
}

// Counts kernel constructions; lets callers verify that a variant without
// the dynamic graph never builds one.
inline std::atomic<std::size_t>& kernel_construction_counter() {
  static std::atomic<std::size_t> counter{0};
  return counter;
}

struct DynamicGraphState {
  Var dyn_embed;   // [B*N x L]
  Var similarity;  // [B*N x N]
  Var degree;      // [B*N x 1], diagonal of D
  Var kernel;      // [B*N x N]
};

// E^d = tanh(E (.) MLP(chi)); A = E^d E^d^T; g = I + D^-1/2 ReLU(A) D^-1/2.
inline DynamicGraphState dynamic_kernel(const ForwardContext& ctx, const std::string& layer_prefix,
                                        const GraphRecurrentConfig& cfg, const Var& chi) {
  if (!chi.value().allFinite()) {
    throw NumericalError("dynamic_kernel: non-finite step input");
  }
  ++kernel_construction_counter();
  const Index n = cfg.nodes;
  const Index batch = chi.rows() / n;
  auto hidden = ag::relu(linear(ctx, layer_prefix + ".mlp1", chi));
  auto modulation = linear(ctx, layer_prefix + ".mlp2", hidden);
  auto embed = ag::tile_rows(ctx.param(layer_prefix + ".node_embed"), batch);

  DynamicGraphState s;
  s.dyn_embed = ag::tanh(ag::mul(embed, modulation));
  s.similarity = ag::block_gram(s.dyn_embed, n);
  auto rect = ag::relu(s.similarity);
  if (cfg.degree == DegreeMode::weighted) {
    s.degree = ag::add_scalar(ag::row_sum(rect), cfg.degree_eps);
  } else {
    const ag::Matrix& r = rect.value();
    ag::Matrix d(r.rows(), 1);
    for (Index i = 0; i < r.rows(); ++i) {
      d(i, 0) = static_cast<double>((r.row(i).array() > 0.0).count()) + cfg.degree_eps;
    }
    s.degree = ctx.constant(std::move(d));
  }
  auto inv_sqrt = ag::pow(s.degree, -0.5);
  s.kernel = ag::add_block_identity(ag::block_sym_scale(rect, inv_sqrt, n), n);
  return s;
}

// g * feats * theta + b per block; an invalid (default) g means identity.
inline Var graph_conv(const Var& g, const Var& feats, const Var& theta, const Var& bias, Index n) {
  Var mixed = g.valid() ? ag::block_matmul(g, feats, n) : feats;
  return ag::add_row(ag::matmul(mixed, theta), bias);
}

struct RecurrentStep {
  Var h;
  Var reset;
  Var update;
  Var candidate;
  DynamicGraphState graph;  // unset when the dynamic graph is disabled
};

inline RecurrentStep stdgcru_step(const ForwardContext& ctx, const std::string& layer_prefix,
                                  const GraphRecurrentConfig& cfg, const Var& chi,
                                  const Var& h_prev) {
  const Index n = cfg.nodes;
  RecurrentStep out;
  Var g;
  if (cfg.dynamic_graph) {
    out.graph = dynamic_kernel(ctx, layer_prefix, cfg, chi);
    g = out.graph.kernel;
  }
  // g [h, chi] = [g h, g chi]; the chi half is shared by all three gates.
  Var g_chi = g.valid() ? ag::block_matmul(g, chi, n) : chi;
  Var g_h = g.valid() ? ag::block_matmul(g, h_prev, n) : h_prev;
  auto gate = [&](const char* name, const Var& mixed_h) {
    return ag::add_row(ag::matmul(ag::hcat(mixed_h, g_chi), ctx.param(layer_prefix + ".theta_" + name)),
                       ctx.param(layer_prefix + ".b_" + name));
  };
  out.reset = ag::sigmoid(gate("r", g_h));
  out.update = ag::sigmoid(gate("z", g_h));
  Var reset_h = ag::mul(out.reset, h_prev);
  Var g_rh = g.valid() ? ag::block_matmul(g, reset_h, n) : reset_h;
  out.candidate = ag::tanh(gate("h", g_rh));
  // h = Z * h~ + (1 - Z) * h_prev
  out.h = ag::add(ag::mul(out.update, out.candidate), ag::mul(ag::one_minus(out.update), h_prev));
  return out;
}

// Unrolls the cell over the step inputs (each [B*N x C_in]) starting from
// h_0 = 0; stacked layers consume the previous layer's per-step outputs.
inline std::vector<Var> stdgcrn_encode(const ForwardContext& ctx, const std::string& prefix,
                                       const GraphRecurrentConfig& cfg,
                                       const std::vector<Var>& steps) {
  std::vector<Var> seq = steps;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = gcrn_layer_prefix(prefix, l);
    Var h = ctx.constant(ag::Matrix::Zero(seq.front().rows(), cfg.hidden));
    std::vector<Var> next;
    next.reserve(seq.size());
    for (const auto& chi : seq) {
      h = stdgcru_step(ctx, p, cfg, chi, h).h;
      next.push_back(h);
    }
    seq = std::move(next);
  }
  return seq;
}

}  // namespace mmst
