#pragma once

// Dataset preparation: chronological split, normalization fit on the train
// span, external-factor encoding, per-window stream inputs, and minibatch
// assembly.

#include <string>
#include <vector>

#include "mmst/config.hpp"
#include "mmst/data.hpp"
#include "mmst/decomposition.hpp"
#include "mmst/external.hpp"
#include "mmst/temporal_enhance.hpp"

namespace mmst {

struct WindowSample {
  std::size_t start = 0;   // first input step
  ag::Matrix raw;          // [P x N]
  ag::Matrix decomposed;   // [P*N x (m+2)], row t*N + n; empty when unused
  ag::Matrix peaks;        // [P*N x C_m]; empty when unused
  ag::Matrix factors;      // [P x 7]
  ag::Matrix target;       // [Q x N]
};

struct PreparedData {
  RawDataset raw;
  NormalizationStats stats;
  std::vector<std::string> warnings;
  ag::Matrix normalized;  // [T x N]
  EncodedExternal external;
  PeriodMasks masks;
  std::size_t split = 0;  // first test step
  std::vector<WindowSample> train;
  std::vector<WindowSample> validation;
  std::vector<WindowSample> test;

  std::size_t nodes() const { return raw.nodes(); }
};

inline bool needs_decomposition(const ModelConfig& cfg) {
  return cfg.model == ModelKind::mmst && cfg.use_decomposition;
}

inline bool needs_peaks(const ModelConfig& cfg) {
  return cfg.model == ModelKind::mmst && cfg.use_peak_amplify;
}

inline std::size_t decomposition_channels(const ModelConfig& cfg) {
  return cfg.ceemdan.max_imfs + 2;
}

// Channels fed to the TCN and max-pool stages per node.
inline std::size_t enhancer_inputs(const ModelConfig& cfg) {
  return cfg.enhance_decomposed ? decomposition_channels(cfg) : 1;
}

namespace pipeline_detail {

inline FlowTensor to_tensor(const ag::Matrix& m) {
  FlowTensor x(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), 1);
  for (Index t = 0; t < m.rows(); ++t) {
    for (Index n = 0; n < m.cols(); ++n) {
      x(static_cast<std::size_t>(t), static_cast<std::size_t>(n), 0) = m(t, n);
    }
  }
  return x;
}

// [P x N x C] -> [P*N x C], row t*N + n.
inline ag::Matrix to_rows(const FlowTensor& x) {
  ag::Matrix m(static_cast<Index>(x.time() * x.nodes()), static_cast<Index>(x.channels()));
  for (std::size_t t = 0; t < x.time(); ++t) {
    for (std::size_t n = 0; n < x.nodes(); ++n) {
      for (std::size_t c = 0; c < x.channels(); ++c) {
        m(static_cast<Index>(t * x.nodes() + n), static_cast<Index>(c)) = x(t, n, c);
      }
    }
  }
  return m;
}

inline FlowTensor from_rows(const ag::Matrix& m, std::size_t time, std::size_t nodes) {
  FlowTensor x(time, nodes, static_cast<std::size_t>(m.cols()));
  for (std::size_t t = 0; t < time; ++t) {
    for (std::size_t n = 0; n < nodes; ++n) {
      for (std::size_t c = 0; c < x.channels(); ++c) {
        x(t, n, c) = m(static_cast<Index>(t * nodes + n), static_cast<Index>(c));
      }
    }
  }
  return x;
}

// Whole-span decomposition of steps [begin, end) for every node.
inline FlowTensor decompose_span(const ag::Matrix& normalized, std::size_t begin, std::size_t end,
                                 const CeemdanConfig& cfg) {
  return decompose_channelize(
      to_tensor(normalized.middleRows(static_cast<Index>(begin), static_cast<Index>(end - begin))), cfg,
      begin);
}

}  // namespace pipeline_detail

inline WindowSample make_sample(const ModelConfig& cfg, const PreparedData& d, std::size_t start,
                                const FlowTensor* span_decomposition, std::size_t span_begin) {
  using namespace pipeline_detail;
  const auto p = static_cast<Index>(cfg.history);
  const auto q = static_cast<Index>(cfg.horizon);
  WindowSample s;
  s.start = start;
  s.raw = d.normalized.middleRows(static_cast<Index>(start), p);
  s.target = d.normalized.middleRows(static_cast<Index>(start) + p, q);
  s.factors = d.external.factors.middleRows(static_cast<Index>(start), p);
  FlowTensor dec;
  if (needs_decomposition(cfg)) {
    if (span_decomposition != nullptr) {
      dec = span_decomposition->slice_time(start - span_begin, cfg.history);
    } else {
      dec = decompose_channelize(to_tensor(s.raw), cfg.ceemdan, start);
    }
    s.decomposed = to_rows(dec);
  }
  if (needs_peaks(cfg)) {
    s.peaks = to_rows(peak_amplify(cfg.enhance_decomposed ? dec : to_tensor(s.raw), cfg.peak));
  }
  return s;
}

// Train windows have every target before the split; test windows have their
// first target at or after it (their history may reach back into the train
// span). The last validation_fraction of train windows is held out.
inline PreparedData prepare_data(const ModelConfig& cfg, const RawDataset& raw,
                                 const std::vector<ExternalFactorRecord>& factors) {
  cfg.validate();
  raw.validate();
  PreparedData d;
  d.raw = raw;
  const std::size_t steps = raw.steps();
  const std::size_t p = cfg.history;
  const std::size_t q = cfg.horizon;
  d.split = split_index(steps, cfg.train_fraction);
  if (d.split < p + q + 1) {
    throw DataError("train span of " + std::to_string(d.split) + " steps is too short for history " +
                    std::to_string(p) + " and horizon " + std::to_string(q));
  }
  if (steps - d.split < q) throw DataError("test span is shorter than the horizon");

  auto fit = minmax_normalize(raw.slice(0, d.split));
  auto all = minmax_normalize(raw, fit.stats);
  d.stats = fit.stats;
  d.warnings = fit.warnings;
  d.normalized = ag::Matrix(static_cast<Index>(steps), static_cast<Index>(raw.nodes()));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t n = 0; n < raw.nodes(); ++n) {
      d.normalized(static_cast<Index>(t), static_cast<Index>(n)) = all.tensor(t, n, 0);
    }
  }

  if (factors.empty()) {
    d.external.factors = ag::Matrix::Zero(static_cast<Index>(steps), kExternalColumns);
    d.warnings.push_back("no external factors supplied; factor embedding sees zeros");
  } else {
    if (factors.size() != steps) {
      throw DataError("external factors have " + std::to_string(factors.size()) +
                      " rows but the flow data has " + std::to_string(steps));
    }
    const std::vector<ExternalFactorRecord> train_part(factors.begin(),
                                                       factors.begin() + static_cast<std::ptrdiff_t>(d.split));
    const auto scaling = encode_external(train_part, cfg.weather_vocabulary).scaling;
    d.external = encode_external(factors, cfg.weather_vocabulary, scaling);
  }
  d.masks = build_period_masks(raw.timestamps, cfg.holidays);

  FlowTensor train_span, test_span;
  const std::size_t test_begin = d.split - p;
  const bool split_scope =
      needs_decomposition(cfg) && cfg.decomposition_scope == DecompositionScope::split;
  if (split_scope) {
    train_span = pipeline_detail::decompose_span(d.normalized, 0, d.split, cfg.ceemdan);
    test_span = pipeline_detail::decompose_span(d.normalized, test_begin, steps, cfg.ceemdan);
  }

  std::vector<WindowSample> train;
  for (std::size_t start = 0; start + p + q <= d.split; start += cfg.stride) {
    train.push_back(make_sample(cfg, d, start, split_scope ? &train_span : nullptr, 0));
  }
  for (std::size_t start = test_begin; start + p + q <= steps; start += cfg.stride) {
    d.test.push_back(make_sample(cfg, d, start, split_scope ? &test_span : nullptr, test_begin));
  }
  if (train.size() < 2) throw DataError("need at least 2 training windows");
  if (d.test.empty()) throw DataError("no test windows");
  auto held = static_cast<std::size_t>(static_cast<double>(train.size()) * cfg.validation_fraction);
  held = std::clamp<std::size_t>(held, 1, train.size() - 1);
  d.validation.assign(std::make_move_iterator(train.end() - static_cast<std::ptrdiff_t>(held)),
                      std::make_move_iterator(train.end()));
  train.resize(train.size() - held);
  d.train = std::move(train);
  return d;
}

// Every window of `raw` becomes an evaluation window, normalized with stats
// saved from training (no refit).
inline PreparedData prepare_evaluation(const ModelConfig& cfg, const RawDataset& raw,
                                       const std::vector<ExternalFactorRecord>& factors,
                                       const NormalizationStats& stats,
                                       const ExternalScaling& scaling) {
  cfg.validate();
  raw.validate();
  PreparedData d;
  d.raw = raw;
  const std::size_t steps = raw.steps();
  window_count(steps, cfg.history, cfg.horizon, cfg.stride);  // throws when too short
  auto all = minmax_normalize(raw, stats);
  d.stats = stats;
  d.warnings = all.warnings;
  d.normalized = ag::Matrix(static_cast<Index>(steps), static_cast<Index>(raw.nodes()));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t n = 0; n < raw.nodes(); ++n) {
      d.normalized(static_cast<Index>(t), static_cast<Index>(n)) = all.tensor(t, n, 0);
    }
  }
  if (factors.empty()) {
    d.external.factors = ag::Matrix::Zero(static_cast<Index>(steps), kExternalColumns);
    d.external.scaling = scaling;
    d.warnings.push_back("no external factors supplied; factor embedding sees zeros");
  } else {
    if (factors.size() != steps) {
      throw DataError("external factors have " + std::to_string(factors.size()) +
                      " rows but the flow data has " + std::to_string(steps));
    }
    d.external = encode_external(factors, cfg.weather_vocabulary, scaling);
  }
  d.masks = build_period_masks(raw.timestamps, cfg.holidays);
  FlowTensor span;
  const bool split_scope =
      needs_decomposition(cfg) && cfg.decomposition_scope == DecompositionScope::split;
  if (split_scope) span = pipeline_detail::decompose_span(d.normalized, 0, steps, cfg.ceemdan);
  for (std::size_t start = 0; start + cfg.history + cfg.horizon <= steps; start += cfg.stride) {
    d.test.push_back(make_sample(cfg, d, start, split_scope ? &span : nullptr, 0));
  }
  return d;
}

// One minibatch in the model's row layouts (B windows, N nodes).
struct Batch {
  Index size = 0;
  Index nodes = 0;
  Index history = 0;
  Index horizon = 0;
  ag::Matrix raw;         // [P x B*N], column b*N + n
  ag::Matrix enhancer;    // [P x B*N*Ce] TCN input, column (b*N + n)*Ce + c
  ag::Matrix decomposed;  // [P*B*N x (m+2)], row t*B*N + b*N + n
  ag::Matrix peaks;       // [P*B*N x C_m]
  ag::Matrix factors;     // [P*B x 7], row t*B + b
  ag::Matrix target;      // [Q*B*N x 1], row q*B*N + b*N + n
  std::vector<std::size_t> starts;
};

inline Batch make_batch(const ModelConfig& cfg, const std::vector<WindowSample>& samples,
                        const std::vector<std::size_t>& indices) {
  Batch b;
  b.size = static_cast<Index>(indices.size());
  if (b.size == 0) throw ShapeError("make_batch: empty batch");
  const auto& first = samples[indices.front()];
  b.nodes = first.raw.cols();
  b.history = first.raw.rows();
  b.horizon = first.target.rows();
  const Index n = b.nodes, p = b.history, q = b.horizon, bs = b.size;
  const Index bn = bs * n;
  b.raw.resize(p, bn);
  b.factors.resize(p * bs, first.factors.cols());
  b.target.resize(q * bn, 1);
  const bool dec = first.decomposed.size() > 0;
  const bool peaks = first.peaks.size() > 0;
  if (dec) b.decomposed.resize(p * bn, first.decomposed.cols());
  if (peaks) b.peaks.resize(p * bn, first.peaks.cols());
  const Index ce = static_cast<Index>(enhancer_inputs(cfg));
  if (cfg.enhance_decomposed && dec) b.enhancer.resize(p, bn * ce);
  for (Index k = 0; k < bs; ++k) {
    const auto& s = samples[indices[static_cast<std::size_t>(k)]];
    b.starts.push_back(s.start);
    b.raw.middleCols(k * n, n) = s.raw;
    for (Index t = 0; t < p; ++t) {
      b.factors.row(t * bs + k) = s.factors.row(t);
      if (dec) b.decomposed.middleRows(t * bn + k * n, n) = s.decomposed.middleRows(t * n, n);
      if (peaks) b.peaks.middleRows(t * bn + k * n, n) = s.peaks.middleRows(t * n, n);
      if (b.enhancer.size() > 0) {
        for (Index j = 0; j < n; ++j) {
          b.enhancer.block(t, (k * n + j) * ce, 1, ce) = s.decomposed.row(t * n + j);
        }
      }
    }
    for (Index h = 0; h < q; ++h) b.target.block(h * bn + k * n, 0, n, 1) = s.target.row(h).transpose();
  }
  if (b.enhancer.size() == 0) b.enhancer = b.raw;
  return b;
}

}  // namespace mmst
