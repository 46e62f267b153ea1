#pragma once

// History enhancement (stacked TCN blocks, B_p stream) and peak
// amplification (multi-scale causal max-pooling, M_p stream).

#include <algorithm>
#include <string>
#include <vector>

#include "mmst/context.hpp"
#include "mmst/flow_tensor.hpp"

namespace mmst {

struct TcnStackConfig {
  std::size_t num_blocks = 12;
  std::size_t layers_per_block = 2;
  double dropout = 0.1;

  // Blocks are numbered from 1.
  static Index kernel_size(std::size_t block) { return static_cast<Index>(2 * block + 1); }
  static Index dilation(std::size_t layer) { return Index{1} << layer; }

  void validate() const {
    if (num_blocks < 1) throw ConfigError("tcn: num_blocks must be >= 1");
    if (layers_per_block < 1) throw ConfigError("tcn: layers_per_block must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("tcn: dropout must be in [0,1)");
  }
};

struct PeakStackConfig {
  std::size_t num_blocks = 6;

  static std::size_t window(std::size_t block) { return 2 * block + 1; }

  void validate() const {
    if (num_blocks < 1) throw ConfigError("peak: num_blocks must be >= 1");
  }
};

// Receptive field of stacked causal convolutions.
inline Index receptive_field(const std::vector<Index>& kernels, const std::vector<Index>& dilations) {
  Index rf = 1;
  for (std::size_t i = 0; i < kernels.size(); ++i) rf += (kernels[i] - 1) * dilations[i];
  return rf;
}

// Single-series convenience wrapper around the tape op.
inline std::vector<double> dilated_causal_conv(const std::vector<double>& seq,
                                               const std::vector<double>& weights, Index d) {
  ag::Tape tape;
  auto x = tape.constant(Eigen::Map<const ag::Matrix>(seq.data(), static_cast<Index>(seq.size()), 1));
  auto w = tape.constant(
      Eigen::Map<const ag::Matrix>(weights.data(), static_cast<Index>(weights.size()), 1));
  auto b = tape.constant(ag::Matrix::Zero(1, 1));
  const ag::Matrix out = ag::dilated_causal_conv_cols(x, w, b, d).value();
  return {out.data(), out.data() + out.size()};
}

inline std::string tcn_layer_name(const std::string& prefix, std::size_t block, std::size_t layer) {
  return prefix + ".block" + std::to_string(block) + ".layer" + std::to_string(layer);
}

// One kernel column per series (columns of the input are series; column j
// uses kernel column j % kernels). Weight-norm scale starts at the column
// norm so the effective initial weight equals v.
inline void add_tcn_params(ParameterStore& store, const std::string& prefix,
                           const TcnStackConfig& cfg, Index kernels, std::mt19937_64& rng) {
  cfg.validate();
  for (std::size_t blk = 1; blk <= cfg.num_blocks; ++blk) {
    const Index k = TcnStackConfig::kernel_size(blk);
    for (std::size_t l = 0; l < cfg.layers_per_block; ++l) {
      const std::string name = tcn_layer_name(prefix, blk, l);
      const std::size_t v = store.add(name + ".v", k, kernels, static_cast<double>(k), rng);
      store.add(name + ".g", store[v].value.colwise().norm());
      store.add(name + ".b", 1, kernels, static_cast<double>(k), rng);
    }
  }
}

inline std::size_t tcn_param_count(const TcnStackConfig& cfg, std::size_t kernels) {
  std::size_t n = 0;
  for (std::size_t blk = 1; blk <= cfg.num_blocks; ++blk) {
    n += cfg.layers_per_block * (static_cast<std::size_t>(TcnStackConfig::kernel_size(blk)) + 2) * kernels;
  }
  return n;
}

// Dropout(ReLU(WeightNorm(DConv(x)))). x is [P x M], one series per column.
inline Var dc_block(const ForwardContext& ctx, const std::string& name, const Var& x,
                    Index dilation, double dropout) {
  auto w = ag::weight_norm_cols(ctx.param(name + ".v"), ctx.param(name + ".g"));
  auto y = ag::relu(ag::dilated_causal_conv_cols(x, w, ctx.param(name + ".b"), dilation));
  return ctx.dropout(y, dropout);
}

inline Var tcn_block(const ForwardContext& ctx, const std::string& prefix,
                     const TcnStackConfig& cfg, std::size_t block, const Var& x) {
  Var y = x;
  for (std::size_t l = 0; l < cfg.layers_per_block; ++l) {
    y = dc_block(ctx, tcn_layer_name(prefix, block, l), y, TcnStackConfig::dilation(l),
                 cfg.dropout);
  }
  return ag::add(y, x);
}

// Every block reads the same input series. Returns [P*M x num_blocks] with
// row t*M + j holding series j at step t.
inline Var history_enhance(const ForwardContext& ctx, const std::string& prefix,
                           const TcnStackConfig& cfg, const Var& x) {
  std::vector<Var> channels;
  channels.reserve(cfg.num_blocks);
  for (std::size_t blk = 1; blk <= cfg.num_blocks; ++blk) {
    channels.push_back(tcn_block(ctx, prefix, cfg, blk, x));
  }
  return ag::stack_channels(channels);
}

// FlowTensor form for a single window in evaluation mode: [P x N x 1] -> [P x N x C_b].
inline FlowTensor history_enhance(const FlowTensor& x, const TcnStackConfig& cfg,
                                  const ParameterStore& store, const std::string& prefix) {
  if (x.channels() != 1) throw ShapeError("history_enhance expects a single input channel");
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const Index p = static_cast<Index>(x.time());
  const Index n = static_cast<Index>(x.nodes());
  ag::Matrix xm(p, n);
  for (Index t = 0; t < p; ++t) {
    for (Index j = 0; j < n; ++j) xm(t, j) = x(static_cast<std::size_t>(t), static_cast<std::size_t>(j), 0);
  }
  const ag::Matrix out = history_enhance(ctx, prefix, cfg, tape.constant(xm)).value();
  FlowTensor result(x.time(), x.nodes(), cfg.num_blocks);
  for (Index t = 0; t < p; ++t) {
    for (Index j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < cfg.num_blocks; ++c) {
        result(static_cast<std::size_t>(t), static_cast<std::size_t>(j), c) =
            out(t * n + j, static_cast<Index>(c));
      }
    }
  }
  return result;
}

// Causal sliding-window maximum; the window is left-padded with the first
// sample, which never changes a maximum that already covers index 0.
inline std::vector<double> causal_max_pool(const std::vector<double>& seq, std::size_t window) {
  std::vector<double> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
    out[t] = *std::max_element(seq.begin() + static_cast<std::ptrdiff_t>(lo),
                               seq.begin() + static_cast<std::ptrdiff_t>(t + 1));
  }
  return out;
}

// [P x N x C] -> [P x N x C*num_blocks]; channel c*num_blocks + i holds
// input channel c pooled with window 2(i+1)+1.
inline FlowTensor peak_amplify(const FlowTensor& x, const PeakStackConfig& cfg) {
  cfg.validate();
  FlowTensor out(x.time(), x.nodes(), x.channels() * cfg.num_blocks);
  for (std::size_t n = 0; n < x.nodes(); ++n) {
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const auto s = x.series(n, c);
      for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
        out.set_series(n, c * cfg.num_blocks + i, causal_max_pool(s, PeakStackConfig::window(i + 1)));
      }
    }
  }
  return out;
}

}  // namespace mmst
