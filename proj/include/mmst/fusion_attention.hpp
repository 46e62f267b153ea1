#pragma once

// Channel-attention fusion of the stream embeddings, positional and external
// embeddings, temporal self-attention, and the output projection.
//
// Embeddings are carried as [P*S x F] with row t*S + s, where a sequence s is
// one (window, node) pair.

#include <cmath>
#include <string>
#include <vector>

#include "mmst/context.hpp"

namespace mmst {

inline void add_channel_attention_params(ParameterStore& store, const std::string& prefix,
                                         Index streams, Index hidden, std::mt19937_64& rng) {
  if (streams < 2) return;  // a single stream fuses to itself
  add_linear(store, prefix + ".mlp1", streams, hidden, rng);
  add_linear(store, prefix + ".mlp2", hidden, streams, rng);
}

inline std::size_t channel_attention_param_count(std::size_t streams, std::size_t hidden) {
  if (streams < 2) return 0;
  return (streams * hidden + hidden) + (hidden * streams + streams);
}

struct ChannelFusion {
  Var fused;                   // [P*B*N x F]
  std::vector<Var> attention;  // per stream i: row r holds AM(i, .) for step/window r
  Var weights;                 // [P*B x S] overall simplex weights
};

inline double channel_attention_scale(Index nodes, Index features) {
  return std::sqrt(static_cast<double>(nodes * features));
}

// Streams are [P*B*N x F] with row (t*B + b)*N + n. Each (t, b) pair is
// fused independently: flatten every stream to N*F, AM = softmax of scaled
// inner products, strengthened_i = sum_j AM(i,j) x_j, and the output is the
// simplex-weighted sum of strengthened streams, W = softmax(MLP(avgpool)).
inline ChannelFusion channel_attention_fuse(const ForwardContext& ctx, const std::string& prefix,
                                            const std::vector<Var>& streams, Index nodes) {
  if (streams.empty()) throw ShapeError("channel_attention_fuse: no streams");
  const Index rows = streams.front().rows();
  const Index f = streams.front().cols();
  for (const auto& s : streams) {
    if (s.rows() != rows || s.cols() != f) {
      throw ShapeError("channel_attention_fuse: stream shapes differ");
    }
  }
  if (rows % nodes != 0) throw ShapeError("channel_attention_fuse: rows not a multiple of N");
  const Index groups = rows / nodes;
  const auto count = static_cast<Index>(streams.size());
  const double inv_alpha = 1.0 / channel_attention_scale(nodes, f);

  std::vector<Var> flat;
  for (const auto& s : streams) flat.push_back(ag::reshape(s, groups, nodes * f));

  ChannelFusion out;
  if (count == 1) {
    out.attention.push_back(ctx.constant(ag::Matrix::Ones(groups, 1)));
    out.weights = ctx.constant(ag::Matrix::Ones(groups, 1));
    out.fused = streams.front();
    return out;
  }

  std::vector<Var> strengthened;
  for (Index i = 0; i < count; ++i) {
    std::vector<Var> logits;
    for (Index j = 0; j < count; ++j) {
      logits.push_back(ag::scale(ag::row_dot(flat[static_cast<std::size_t>(i)],
                                             flat[static_cast<std::size_t>(j)]),
                                 inv_alpha));
    }
    Var am = ag::softmax_rows(ag::hcat(logits));
    Var acc;
    for (Index j = 0; j < count; ++j) {
      Var term = ag::scale_rows(flat[static_cast<std::size_t>(j)], ag::col(am, j));
      acc = acc.valid() ? ag::add(acc, term) : term;
    }
    out.attention.push_back(am);
    strengthened.push_back(acc);
  }

  std::vector<Var> pooled;
  for (const auto& x : flat) pooled.push_back(ag::row_mean(x));
  Var hidden = ag::relu(linear(ctx, prefix + ".mlp1", ag::hcat(pooled)));
  out.weights = ag::softmax_rows(linear(ctx, prefix + ".mlp2", hidden));

  Var fused;
  for (Index i = 0; i < count; ++i) {
    Var term = ag::scale_rows(strengthened[static_cast<std::size_t>(i)], ag::col(out.weights, i));
    fused = fused.valid() ? ag::add(fused, term) : term;
  }
  out.fused = ag::reshape(fused, rows, f);
  return out;
}

// Ablation: streams added directly.
inline Var sum_streams(const std::vector<Var>& streams) {
  Var acc = streams.front();
  for (std::size_t i = 1; i < streams.size(); ++i) acc = ag::add(acc, streams[i]);
  return acc;
}

// PE(t, 2i) = sin(t / 10000^(2i/F)), PE(t, 2i+1) = cos(same).
inline ag::Matrix positional_encoding(Index positions, Index features) {
  if (features % 2 != 0) {
    throw ConfigError("positional encoding needs an even embedding size, got " +
                      std::to_string(features));
  }
  ag::Matrix pe(positions, features);
  for (Index t = 0; t < positions; ++t) {
    for (Index i = 0; i < features / 2; ++i) {
      const double angle =
          static_cast<double>(t) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(features));
      pe(t, 2 * i) = std::sin(angle);
      pe(t, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

inline void add_external_params(ParameterStore& store, const std::string& prefix, Index factors,
                                Index features, std::mt19937_64& rng) {
  add_linear(store, prefix, factors, features, rng);
}

// [rows x 7] encoded factors -> [rows x F].
inline Var embed_external(const ForwardContext& ctx, const std::string& prefix, const Var& factors) {
  return linear(ctx, prefix, factors);
}

struct SelfAttentionConfig {
  std::size_t layers = 2;
  double dropout = 0.1;
};

inline void add_self_attention_params(ParameterStore& store, const std::string& prefix,
                                      const SelfAttentionConfig& cfg, Index features,
                                      std::mt19937_64& rng) {
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    store.add(p + ".ln_gamma", ag::Matrix::Ones(1, features));
    store.add(p + ".ln_beta", ag::Matrix::Zero(1, features));
    for (const char* w : {".wq", ".wk", ".wv"}) {
      store.add(p + w, features, features, static_cast<double>(features), rng);
    }
  }
}

inline std::size_t self_attention_param_count(const SelfAttentionConfig& cfg, std::size_t f) {
  return cfg.layers * (2 * f + 3 * f * f);
}

// Per layer: E^ = LayerNorm(E) over F; out = E^ + Attention(drop(E^) Wq,
// drop(E^) Wk, drop(E^) Wv) over the P positions of each sequence.
inline Var self_attention_enhance(const ForwardContext& ctx, const std::string& prefix,
                                  const SelfAttentionConfig& cfg, const Var& x, Index sequences,
                                  std::vector<std::vector<ag::Matrix>>* weights_out = nullptr) {
  Var e = x;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    Var norm = ag::layer_norm_rows(e, ctx.param(p + ".ln_gamma"), ctx.param(p + ".ln_beta"));
    Var in = ctx.dropout(norm, cfg.dropout);
    Var q = ag::matmul(in, ctx.param(p + ".wq"));
    Var k = ag::matmul(in, ctx.param(p + ".wk"));
    Var v = ag::matmul(in, ctx.param(p + ".wv"));
    std::vector<ag::Matrix> weights;
    Var attended = ag::sequence_attention(q, k, v, sequences, weights_out ? &weights : nullptr);
    if (weights_out != nullptr) weights_out->push_back(std::move(weights));
    e = ag::add(norm, attended);
  }
  return e;
}

inline void add_projection_params(ParameterStore& store, const std::string& prefix, Index history,
                                  Index horizon, Index features, Index outputs,
                                  std::mt19937_64& rng) {
  store.add(prefix + ".time_w", horizon, history, static_cast<double>(history), rng);
  store.add(prefix + ".time_b", horizon, 1, static_cast<double>(history), rng);
  add_linear(store, prefix + ".feature", features, outputs, rng);
}

inline std::size_t projection_param_count(std::size_t p, std::size_t q, std::size_t f,
                                          std::size_t c) {
  return q * p + q + f * c + c;
}

// [P*S x F] -> time axis P -> Q, then feature axis F -> C: [Q*S x C], row q*S + s.
inline Var project_output(const ForwardContext& ctx, const std::string& prefix, const Var& x,
                          Index history, Index sequences) {
  const Index f = x.cols();
  if (x.rows() != history * sequences) throw ShapeError("project_output: row layout mismatch");
  Var wide = ag::reshape(x, history, sequences * f);
  Var t = ag::add_col(ag::matmul(ctx.param(prefix + ".time_w"), wide), ctx.param(prefix + ".time_b"));
  const Index horizon = t.rows();
  return linear(ctx, prefix + ".feature", ag::reshape(t, horizon * sequences, f));
}

}  // namespace mmst
