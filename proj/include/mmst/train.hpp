#pragma once

// Training harness: AdamW with decoupled weight decay, global-norm clipping,
// early stopping on a held-out tail of the train windows, evaluation,
// forecasting and the history-window sweep.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmst/losses_metrics.hpp"
#include "mmst/model.hpp"

namespace mmst {

struct AdamW {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step_count = 0;
  std::vector<ag::Matrix> m, v;

  void step(ParameterStore& params, const Gradients& grads) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.push_back(ag::Matrix::Zero(p.value.rows(), p.value.cols()));
        v.push_back(ag::Matrix::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++step_count;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].value;
      const auto& g = grads[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
      w *= 1.0 - lr * weight_decay;
      w.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Model model;  // parameters from the best validation epoch
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

struct TrainOptions {
  std::function<void(const EpochLog&)> on_epoch;
  // Overrides cfg.max_epochs when set.
  std::optional<std::size_t> max_epochs;
};

namespace train_detail {

inline std::vector<std::vector<std::size_t>> chunks(const std::vector<std::size_t>& idx,
                                                    std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < idx.size(); i += size) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + size)));
  }
  return out;
}

inline double parameter_norm(const ParameterStore& params) {
  double s = 0.0;
  for (const auto& p : params) s += p.value.squaredNorm();
  return std::sqrt(s);
}

}  // namespace train_detail

// Forecasts for a window set in evaluation mode: [windows*Q x N] with row
// w*Q + q, in window order.
inline ag::Matrix predict_windows(const Model& model, const std::vector<WindowSample>& samples) {
  const auto& cfg = model.config();
  const Index n = model.nodes();
  const Index q = static_cast<Index>(cfg.horizon);
  ag::Matrix out(static_cast<Index>(samples.size()) * q, n);
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  for (const auto& chunk : train_detail::chunks(all, cfg.micro_batch)) {
    Batch batch = make_batch(cfg, samples, chunk);
    ag::Tape tape;
    ForwardContext ctx{tape, model.params(), false, nullptr};
    const ag::Matrix& y = model.forward(ctx, batch).value();
    const Index bs = batch.size;
    for (Index k = 0; k < bs; ++k) {
      const auto w = static_cast<Index>(chunk[static_cast<std::size_t>(k)]);
      for (Index h = 0; h < q; ++h) {
        out.row(w * q + h) = y.block(h * bs * n + k * n, 0, n, 1).transpose();
      }
    }
  }
  return out;
}

inline ag::Matrix stack_targets(const std::vector<WindowSample>& samples) {
  const Index q = samples.front().target.rows();
  ag::Matrix out(static_cast<Index>(samples.size()) * q, samples.front().target.cols());
  for (std::size_t w = 0; w < samples.size(); ++w) {
    out.middleRows(static_cast<Index>(w) * q, q) = samples[w].target;
  }
  return out;
}

inline std::vector<std::size_t> target_steps(const std::vector<WindowSample>& samples,
                                             std::size_t history, std::size_t horizon) {
  std::vector<std::size_t> steps;
  for (const auto& s : samples) {
    for (std::size_t h = 0; h < horizon; ++h) steps.push_back(s.start + history + h);
  }
  return steps;
}

inline double window_loss(const Model& model, const std::vector<WindowSample>& samples) {
  return loss_value(model.config().loss, stack_targets(samples), predict_windows(model, samples));
}

inline EvaluationReport evaluate_model(const Model& model, const PreparedData& data,
                                       const std::vector<WindowSample>& samples) {
  const auto& cfg = model.config();
  std::vector<double> scale;
  for (std::size_t n = 0; n < data.nodes(); ++n) {
    scale.push_back(data.stats.degenerate(n) ? 0.0 : data.stats.max[n] - data.stats.min[n]);
  }
  return evaluate(predict_windows(model, samples), stack_targets(samples),
                  target_steps(samples, cfg.history, cfg.horizon), data.masks, &scale);
}

// Minimizes the configured loss; keeps the parameters of the best
// validation epoch. Throws NumericalError on a non-finite loss or gradient.
inline TrainResult train(const ModelConfig& cfg, const PreparedData& data,
                         const TrainOptions& options = {}) {
  Model model(cfg, data.nodes());
  TrainResult result{model, {}, 0, false};
  AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 1));
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 2));

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const std::size_t epochs = options.max_epochs.value_or(cfg.max_epochs);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t batch_no = 0;
    for (const auto& batch_idx : train_detail::chunks(order, cfg.batch_size)) {
      ++batch_no;
      Gradients grads(model.params());
      double batch_loss = 0.0;
      for (const auto& micro : train_detail::chunks(batch_idx, cfg.micro_batch)) {
        Batch batch = make_batch(cfg, data.train, micro);
        ag::Tape tape;
        ForwardContext ctx{tape, model.params(), true, &dropout_rng};
        Var pred = model.forward(ctx, batch);
        Var l = loss(cfg.loss, tape.constant(batch.target), pred);
        const double w = static_cast<double>(micro.size()) / static_cast<double>(batch_idx.size());
        tape.backward(l);
        grads.add_from(tape, w);
        batch_loss += w * l.scalar();
      }
      if (!std::isfinite(batch_loss) || !grads.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite " << (std::isfinite(batch_loss) ? "gradient" : "loss") << " at epoch "
            << epoch << ", batch " << batch_no << " (parameter norm "
            << train_detail::parameter_norm(model.params()) << ")";
        throw NumericalError(msg.str());
      }
      const double norm = grads.global_norm();
      if (norm > cfg.grad_clip) grads.scale(cfg.grad_clip / norm);
      opt.step(model.params(), grads);
      loss_sum += batch_loss * static_cast<double>(batch_idx.size());
      seen += batch_idx.size();
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.validation_loss = window_loss(model, data.validation);
    if (!std::isfinite(log.validation_loss)) {
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch) +
                           " (parameter norm " +
                           std::to_string(train_detail::parameter_norm(model.params())) + ")");
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
    if (log.validation_loss < best) {
      best = log.validation_loss;
      result.best_epoch = epoch;
      result.model.params() = model.params();
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

// Denormalized forecasts clamped at zero: one row per (window, horizon step).
struct Forecast {
  std::vector<Timestamp> timestamps;
  std::vector<std::size_t> horizon_step;  // 1-based
  ag::Matrix values;                      // [rows x N], persons/hour
  std::vector<std::string> node_names;

  void write_csv(std::ostream& os) const {
    os << "timestamp,horizon";
    for (const auto& n : node_names) os << ',' << n;
    os << '\n';
    char buf[32];
    for (Index r = 0; r < values.rows(); ++r) {
      os << format_timestamp(timestamps[static_cast<std::size_t>(r)]) << ','
         << horizon_step[static_cast<std::size_t>(r)];
      for (Index n = 0; n < values.cols(); ++n) {
        std::snprintf(buf, sizeof buf, "%.6f", values(r, n));
        os << ',' << buf;
      }
      os << '\n';
    }
  }
};

inline Forecast forecast(const Model& model, const PreparedData& data,
                         const std::vector<WindowSample>& samples) {
  const auto& cfg = model.config();
  const ag::Matrix pred = predict_windows(model, samples);
  Forecast f;
  f.node_names = data.raw.node_names;
  f.values.resize(pred.rows(), pred.cols());
  const auto steps = target_steps(samples, cfg.history, cfg.horizon);
  const double interval = data.raw.interval_hours;
  for (Index r = 0; r < pred.rows(); ++r) {
    const std::size_t step = steps[static_cast<std::size_t>(r)];
    f.horizon_step.push_back(static_cast<std::size_t>(r) % cfg.horizon + 1);
    f.timestamps.push_back(
        step < data.raw.steps()
            ? data.raw.timestamps[step]
            : data.raw.timestamps.back() +
                  std::chrono::seconds(static_cast<long>(std::lround(
                      3600.0 * interval * static_cast<double>(step - data.raw.steps() + 1)))));
    for (Index n = 0; n < pred.cols(); ++n) {
      f.values(r, n) = std::max(0.0, data.stats.denormalize(pred(r, n), static_cast<std::size_t>(n)));
    }
  }
  return f;
}

struct SweepRow {
  std::size_t history = 0;
  std::size_t horizon = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t epochs = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> notices;  // skipped sizes

  // Index of the minimum-MSE row for the given horizon.
  std::optional<std::size_t> best(std::size_t horizon) const {
    std::optional<std::size_t> b;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].horizon != horizon) continue;
      if (!b || rows[i].mse < rows[*b].mse) b = i;
    }
    return b;
  }

  void write_table(std::ostream& os) const {
    os << "history,horizon,mse,mae,epochs\n";
    char buf[96];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.8g,%.8g,%zu\n", r.history, r.horizon, r.mse, r.mae,
                    r.epochs);
      os << buf;
    }
  }
};

// One model per (P, Q); test-span MSE/MAE on the normalized scale.
inline SweepResult sweep_windows(const ModelConfig& base, const RawDataset& raw,
                                 const std::vector<ExternalFactorRecord>& factors,
                                 const std::vector<std::size_t>& sizes,
                                 const std::vector<std::size_t>& horizons,
                                 const TrainOptions& options = {}) {
  SweepResult out;
  for (std::size_t q : horizons) {
    for (std::size_t p : sizes) {
      ModelConfig cfg = base;
      cfg.history = p;
      cfg.horizon = q;
      const std::size_t split = split_index(raw.steps(), cfg.train_fraction);
      if (p + q + 2 > split || p + q > raw.steps() - split + p) {
        out.notices.push_back("skipping history " + std::to_string(p) + ", horizon " +
                              std::to_string(q) + ": windows exceed the dataset");
        continue;
      }
      PreparedData data = prepare_data(cfg, raw, factors);
      TrainResult tr = train(cfg, data, options);
      const auto report = evaluate_model(tr.model, data, data.test);
      out.rows.push_back({p, q, *report["entire"].mse, *report["entire"].mae, tr.history.size()});
    }
  }
  return out;
}

}  // namespace mmst
