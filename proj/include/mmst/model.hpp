#pragma once

// Model assembly: stream inputs -> per-stream recurrent graph encoders ->
// channel fusion -> (+ positional and external embeddings) -> temporal
// self-attention -> output projection. Also the GRU/LSTM baselines, which
// share the projection head.

#include <random>
#include <string>
#include <vector>

#include "mmst/config.hpp"
#include "mmst/context.hpp"
#include "mmst/fusion_attention.hpp"
#include "mmst/pipeline.hpp"
#include "mmst/stdgcrn.hpp"
#include "mmst/temporal_enhance.hpp"

namespace mmst {

enum class StreamKind { decomposed, history, peak, raw };

inline std::string to_string(StreamKind s) {
  switch (s) {
    case StreamKind::decomposed: return "decomposed";
    case StreamKind::history: return "history";
    case StreamKind::peak: return "peak";
    case StreamKind::raw: return "raw";
  }
  return "?";
}

struct ForwardTrace {
  std::vector<Var> stream_embeddings;  // [P*B*N x F] each
  ChannelFusion fusion;
  std::vector<std::vector<ag::Matrix>> attention_weights;
};

// LSTM baseline cell; gates i, f, o, g act on [h, x].
inline void add_lstm_params(ParameterStore& store, const std::string& prefix, Index input,
                            Index hidden, std::mt19937_64& rng) {
  const Index fan = hidden + input;
  for (const char* gate : {"i", "f", "o", "g"}) {
    store.add(prefix + ".w_" + gate, fan, hidden, static_cast<double>(fan), rng);
    store.add(prefix + ".b_" + gate, 1, hidden, static_cast<double>(fan), rng);
  }
}

inline std::vector<Var> lstm_encode(const ForwardContext& ctx, const std::string& prefix,
                                    Index hidden, const std::vector<Var>& steps) {
  Var h = ctx.constant(ag::Matrix::Zero(steps.front().rows(), hidden));
  Var c = h;
  std::vector<Var> out;
  for (const auto& x : steps) {
    Var hx = ag::hcat(h, x);
    auto gate = [&](const char* g) {
      return ag::add_row(ag::matmul(hx, ctx.param(prefix + ".w_" + g)), ctx.param(prefix + ".b_" + g));
    };
    Var i = ag::sigmoid(gate("i"));
    Var f = ag::sigmoid(gate("f"));
    Var o = ag::sigmoid(gate("o"));
    Var g = ag::tanh(gate("g"));
    c = ag::add(ag::mul(f, c), ag::mul(i, g));
    h = ag::mul(o, ag::tanh(c));
    out.push_back(h);
  }
  return out;
}

class Model {
 public:
  Model(const ModelConfig& cfg, std::size_t nodes) : cfg_(cfg), nodes_(static_cast<Index>(nodes)) {
    cfg_.validate();
    if (nodes < 1) throw ConfigError("model needs at least one node");
    std::mt19937_64 rng(cfg_.seed);
    const Index f = static_cast<Index>(cfg_.embed_dim);
    if (cfg_.model == ModelKind::mmst) {
      for (StreamKind s : streams()) {
        if (s == StreamKind::history) {
          add_tcn_params(params_, "history.tcn", cfg_.tcn,
                         nodes_ * static_cast<Index>(enhancer_inputs(cfg_)), rng);
        }
        add_stdgcrn_params(params_, stream_prefix(s), graph_config(s), rng);
      }
      if (cfg_.use_channel_attention) {
        add_channel_attention_params(params_, "fusion", static_cast<Index>(streams().size()),
                                     static_cast<Index>(cfg_.fusion_hidden), rng);
      }
      if (cfg_.use_self_attention) {
        add_external_params(params_, "external", kExternalColumns, f, rng);
        add_self_attention_params(params_, "attention", cfg_.attention, f, rng);
      }
    } else if (cfg_.model == ModelKind::gru) {
      add_stdgcrn_params(params_, stream_prefix(StreamKind::raw), graph_config(StreamKind::raw), rng);
    } else {
      add_lstm_params(params_, "stream.raw.lstm", 1, f, rng);
    }
    add_projection_params(params_, "head", static_cast<Index>(cfg_.history),
                          static_cast<Index>(cfg_.horizon), f, static_cast<Index>(cfg_.output_dim),
                          rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  Index nodes() const { return nodes_; }

  // Enabled input streams in a fixed order; with every enhancer off the
  // model consumes the raw series as its single stream.
  std::vector<StreamKind> streams() const {
    if (cfg_.model != ModelKind::mmst) return {StreamKind::raw};
    std::vector<StreamKind> s;
    if (cfg_.use_decomposition) s.push_back(StreamKind::decomposed);
    if (cfg_.use_history_enhance) s.push_back(StreamKind::history);
    if (cfg_.use_peak_amplify) s.push_back(StreamKind::peak);
    if (s.empty()) s.push_back(StreamKind::raw);
    return s;
  }

  Index stream_channels(StreamKind s) const {
    switch (s) {
      case StreamKind::decomposed: return static_cast<Index>(decomposition_channels(cfg_));
      case StreamKind::history:
        return static_cast<Index>(cfg_.tcn.num_blocks * enhancer_inputs(cfg_));
      case StreamKind::peak: return static_cast<Index>(cfg_.peak.num_blocks * enhancer_inputs(cfg_));
      case StreamKind::raw: return 1;
    }
    return 0;
  }

  static std::string stream_prefix(StreamKind s) { return "stream." + to_string(s) + ".gcrn"; }

  GraphRecurrentConfig graph_config(StreamKind s) const {
    GraphRecurrentConfig g;
    g.nodes = nodes_;
    g.input_channels = stream_channels(s);
    g.hidden = static_cast<Index>(cfg_.embed_dim);
    g.node_embed = static_cast<Index>(cfg_.node_embed_dim);
    g.layers = cfg_.gcrn_layers;
    g.dynamic_graph = cfg_.model == ModelKind::mmst && cfg_.use_dynamic_graph;
    g.degree = cfg_.degree_mode;
    g.degree_eps = cfg_.degree_eps;
    return g;
  }

  // Parameter count derived from the stage shapes.
  std::size_t expected_param_count() const {
    const std::size_t f = cfg_.embed_dim;
    std::size_t n = projection_param_count(cfg_.history, cfg_.horizon, f, cfg_.output_dim);
    if (cfg_.model == ModelKind::lstm) return n + 4 * ((f + 1) * f + f);
    for (StreamKind s : streams()) {
      if (s == StreamKind::history) {
        n += tcn_param_count(cfg_.tcn, static_cast<std::size_t>(nodes_) * enhancer_inputs(cfg_));
      }
      n += stdgcrn_param_count(graph_config(s));
    }
    if (cfg_.model == ModelKind::mmst) {
      if (cfg_.use_channel_attention) n += channel_attention_param_count(streams().size(), cfg_.fusion_hidden);
      if (cfg_.use_self_attention) {
        n += kExternalColumns * f + f + self_attention_param_count(cfg_.attention, f);
      }
    }
    return n;
  }

  // Returns [Q*B*N x C] with row q*B*N + b*N + n.
  Var forward(const ForwardContext& ctx, const Batch& batch, ForwardTrace* trace = nullptr) const {
    if (batch.nodes != nodes_) {
      throw ShapeError("batch has " + std::to_string(batch.nodes) + " nodes, model expects " +
                       std::to_string(nodes_));
    }
    if (batch.history != static_cast<Index>(cfg_.history)) {
      throw ShapeError("batch history length differs from the model's");
    }
    const Index p = batch.history;
    const Index bn = batch.size * nodes_;

    std::vector<Var> embeddings;
    for (StreamKind s : streams()) {
      Var input = stream_input(ctx, batch, s);
      std::vector<Var> steps;
      steps.reserve(static_cast<std::size_t>(p));
      for (Index t = 0; t < p; ++t) steps.push_back(ag::slice_rows(input, t * bn, bn));
      std::vector<Var> hidden =
          cfg_.model == ModelKind::lstm
              ? lstm_encode(ctx, "stream.raw.lstm", static_cast<Index>(cfg_.embed_dim), steps)
              : stdgcrn_encode(ctx, stream_prefix(s), graph_config(s), steps);
      embeddings.push_back(ag::vcat(hidden));
    }
    if (trace != nullptr) trace->stream_embeddings = embeddings;

    Var fused;
    if (cfg_.model != ModelKind::mmst) {
      fused = embeddings.front();
    } else if (cfg_.use_channel_attention) {
      ChannelFusion fusion = channel_attention_fuse(ctx, "fusion", embeddings, nodes_);
      fused = fusion.fused;
      if (trace != nullptr) trace->fusion = fusion;
    } else {
      fused = sum_streams(embeddings);
    }

    Var enhanced = fused;
    if (cfg_.model == ModelKind::mmst && cfg_.use_self_attention) {
      const Index f = static_cast<Index>(cfg_.embed_dim);
      Var pe = ag::repeat_rows(ctx.constant(positional_encoding(p, f)), bn);
      Var ext = ag::repeat_rows(embed_external(ctx, "external", ctx.constant(batch.factors)), nodes_);
      Var emb = ag::add(ag::add(fused, pe), ext);
      enhanced = self_attention_enhance(ctx, "attention", cfg_.attention, emb, bn,
                                        trace ? &trace->attention_weights : nullptr);
    }
    return project_output(ctx, "head", enhanced, p, bn);
  }

 private:
  // [P*B*N x C_s], row t*B*N + b*N + n.
  Var stream_input(const ForwardContext& ctx, const Batch& batch, StreamKind s) const {
    const Index p = batch.history;
    const Index bn = batch.size * nodes_;
    switch (s) {
      case StreamKind::decomposed: return ctx.constant(batch.decomposed);
      case StreamKind::peak: return ctx.constant(batch.peaks);
      case StreamKind::raw: return ag::reshape(ctx.constant(batch.raw), p * bn, 1);
      case StreamKind::history: {
        Var out = history_enhance(ctx, "history.tcn", cfg_.tcn, ctx.constant(batch.enhancer));
        return ag::reshape(out, p * bn, stream_channels(s));
      }
    }
    throw ConfigError("unknown stream");
  }

  ModelConfig cfg_;
  Index nodes_ = 0;
  ParameterStore params_;
};

}  // namespace mmst
