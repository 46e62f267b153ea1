// mmst: command-line front end for the forecasting pipeline.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmst/mmst.hpp"

namespace fs = std::filesystem;
using namespace mmst;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::string variant;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a, bool required) {
  auto* opt = cmd->add_option("--config", a.path, "config file (key = value lines)");
  if (required) opt->required();
  cmd->add_option("--set", a.overrides, "override a config key, key=value")->take_all();
  cmd->add_option("--variant", a.variant, "ablation variant (ND, NH, ..., NSA) or full");
}

ModelConfig resolve_config(const ConfigArgs& a) {
  ModelConfig cfg = a.path.empty() ? ModelConfig{} : load_config(a.path);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1)));
  }
  if (!a.variant.empty()) cfg = apply_variant(cfg, a.variant);
  cfg.validate();
  return cfg;
}

std::vector<ExternalFactorRecord> load_factors(const std::string& path) {
  if (path.empty()) return {};
  return load_external_csv(path);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

void write_report(const fs::path& stem, const EvaluationReport& r) {
  std::ofstream txt(stem.string() + ".out");
  if (!txt) throw DataError("cannot write " + stem.string() + ".out");
  r.write_text(txt);
  write_file(stem.string() + ".json", r.to_json().dump(2) + "\n");
}

void print_warnings(const PreparedData& d) {
  for (const auto& w : d.warnings) std::cerr << "warning: " << w << "\n";
}

EvaluationReport read_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open report: " + path);
  if (fs::path(path).extension() == ".json") {
    try {
      return EvaluationReport::from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed report " + path + ": " + e.what());
    }
  }
  return EvaluationReport::from_text(is);
}

// Columns of a forecast CSV written by `predict`, horizon-1 rows only.
struct ForecastTable {
  std::vector<std::string> nodes;
  std::vector<std::vector<double>> values;  // per node
};

ForecastTable read_forecast(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open forecast: " + path);
  std::string line;
  std::getline(in, line);
  auto header = csv::split_line(line);
  if (header.size() < 3 || header[0] != "timestamp" || header[1] != "horizon") {
    throw DataError(path + ": not a forecast file (expected timestamp,horizon,...)");
  }
  ForecastTable t;
  t.nodes.assign(header.begin() + 2, header.end());
  t.values.resize(t.nodes.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = csv::split_line(line);
    if (cells.size() != header.size()) throw DataError(path + ": ragged row");
    if (cells[1] != "1") continue;
    for (std::size_t n = 0; n < t.nodes.size(); ++n) {
      auto v = csv::parse_double(cells[n + 2]);
      if (!v) throw DataError(path + ": bad number '" + cells[n + 2] + "'");
      t.values[n].push_back(*v);
    }
  }
  return t;
}

int run_synth(std::size_t nodes, std::size_t days, std::uint64_t seed, double coupling,
              const std::string& start, const std::string& out) {
  SyntheticSpec spec;
  spec.nodes = nodes;
  spec.days = days;
  spec.seed = seed;
  spec.coupling = coupling;
  if (!start.empty()) spec.start = parse_date(start);
  const auto syn = generate_synthetic(spec);
  fs::create_directories(out);
  {
    std::ofstream os(fs::path(out) / "flow.csv");
    write_flow_csv(os, syn.flows);
  }
  {
    std::ofstream os(fs::path(out) / "factors.csv");
    write_external_csv(os, syn.flows.timestamps, syn.factors);
  }
  std::ofstream pairs(fs::path(out) / "coupling.csv");
  pairs << "driver,follower\n";
  for (const auto& [d, f] : syn.coupled_pairs) {
    pairs << syn.flows.node_names[d] << ',' << syn.flows.node_names[f] << '\n';
  }
  std::cout << "wrote " << syn.flows.steps() << " steps x " << nodes << " nodes to " << out << "\n";
  return 0;
}

int run_decompose(const std::string& flow_path, const std::string& out, const ModelConfig& cfg) {
  const RawDataset raw = load_flow_csv(flow_path);
  fs::create_directories(out);
  const fs::path cache = fs::path(out) / "decomposition.bin";
  std::vector<CachedNode> nodes;
  if (auto cached = load_valid_cache(cache.string(), cfg.ceemdan, raw.node_names, raw.steps())) {
    std::cout << "cache is current: " << cache.string() << "\n";
    nodes = std::move(*cached);
  } else {
    for (std::size_t n = 0; n < raw.nodes(); ++n) {
      Series x(raw.steps());
      for (std::size_t t = 0; t < raw.steps(); ++t) {
        x[t] = raw.values(static_cast<Index>(t), static_cast<Index>(n));
      }
      CeemdanConfig c = cfg.ceemdan;
      c.seed = derive_seed(cfg.ceemdan.seed, n);
      CachedNode node{raw.node_names[n], static_cast<std::uint32_t>(c.max_imfs), cfg.ceemdan.hash(),
                      ceemdan(x, c)};
      node.result.original.clear();
      nodes.push_back(std::move(node));
    }
    write_decomposition_cache(cache.string(), nodes);
  }
  std::ofstream summary(fs::path(out) / "summary.csv");
  summary << "node,imfs,reconstruction_error\n";
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    auto r = nodes[n].result;
    r.original.resize(raw.steps());
    for (std::size_t t = 0; t < raw.steps(); ++t) {
      r.original[t] = raw.values(static_cast<Index>(t), static_cast<Index>(n));
    }
    summary << nodes[n].name << ',' << r.imfs.size() << ',' << r.reconstruction_error() << '\n';
  }
  std::cout << "decomposed " << nodes.size() << " nodes into " << cache.string() << "\n";
  return 0;
}

int run_train(const ModelConfig& cfg, std::optional<std::size_t> epochs) {
  if (cfg.flow_csv.empty()) throw ConfigError("train: flow_csv is not set");
  const RawDataset raw = load_flow_csv(cfg.flow_csv);
  const PreparedData data = prepare_data(cfg, raw, load_factors(cfg.factors_csv));
  print_warnings(data);
  std::cout << "windows: train " << data.train.size() << ", validation " << data.validation.size()
            << ", test " << data.test.size() << "\n";
  TrainOptions opt;
  opt.max_epochs = epochs;
  opt.on_epoch = [](const EpochLog& e) {
    std::printf("epoch %3zu  train %.6g  validation %.6g  (%.1fs)\n", e.epoch, e.train_loss,
                e.validation_loss, e.seconds);
    std::fflush(stdout);
  };
  const TrainResult tr = train(cfg, data, opt);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  save_checkpoint((dir / "checkpoint.json").string(), make_checkpoint(tr, data));
  {
    std::ofstream os(dir / "config.cfg");
    write_config(os, cfg);
  }
  std::ofstream hist(dir / "history.csv");
  hist << "epoch,train_loss,validation_loss,seconds\n";
  for (const auto& e : tr.history) {
    hist << e.epoch << ',' << e.train_loss << ',' << e.validation_loss << ',' << e.seconds << '\n';
  }
  const auto report = evaluate_model(tr.model, data, data.test);
  write_report(dir / "report", report);
  std::cout << "best epoch " << tr.best_epoch << (tr.early_stopped ? " (early stop)" : "")
            << "; test mse " << report["entire"].mse.value_or(0.0) << ", mae "
            << report["entire"].mae.value_or(0.0) << "\n"
            << "wrote " << (dir / "checkpoint.json").string() << "\n";
  return 0;
}

PreparedData evaluation_data(const Checkpoint& ck, const std::string& data_path,
                             const std::string& factors_path) {
  const RawDataset raw = align_nodes(load_flow_csv(data_path), ck.node_names);
  PreparedData d =
      prepare_evaluation(ck.config, raw, load_factors(factors_path), ck.stats, ck.external_scaling);
  print_warnings(d);
  return d;
}

int run_evaluate(const std::string& ckpt, const std::string& data_path,
                 const std::string& factors_path, const std::string& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const Model model = restore_model(ck);
  const PreparedData d = evaluation_data(ck, data_path, factors_path);
  const auto report = evaluate_model(model, d, d.test);
  if (out.empty()) {
    report.write_text(std::cout);
  } else {
    write_report(out, report);
    std::cout << "wrote " << out << ".out and " << out << ".json\n";
  }
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& data_path,
                const std::string& factors_path, const std::string& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const Model model = restore_model(ck);
  const PreparedData d = evaluation_data(ck, data_path, factors_path);
  const Forecast f = forecast(model, d, d.test);
  if (out.empty()) {
    f.write_csv(std::cout);
  } else {
    std::ofstream os(out);
    if (!os) throw DataError("cannot write " + out);
    f.write_csv(os);
    std::cout << "wrote " << f.values.rows() << " forecast rows to " << out << "\n";
  }
  return 0;
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  for (const auto& s : config_detail::split(list, ',')) {
    const auto t = config_detail::trim(s);
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (t.empty() || pos != t.size() || v == 0) throw ConfigError("bad size '" + t + "'");
    out.push_back(v);
  }
  return out;
}

int run_sweep(const ModelConfig& cfg, const std::string& sizes, const std::string& horizons,
              std::optional<std::size_t> epochs, const std::string& out) {
  if (cfg.flow_csv.empty()) throw ConfigError("sweep: flow_csv is not set");
  const RawDataset raw = load_flow_csv(cfg.flow_csv);
  TrainOptions opt;
  opt.max_epochs = epochs;
  const auto qs = horizons.empty() ? std::vector<std::size_t>{cfg.horizon} : parse_sizes(horizons);
  const SweepResult r = sweep_windows(cfg, raw, load_factors(cfg.factors_csv), parse_sizes(sizes), qs, opt);
  for (const auto& n : r.notices) std::cerr << "notice: " << n << "\n";
  r.write_table(std::cout);
  for (std::size_t q : qs) {
    if (auto b = r.best(q)) {
      std::cout << "best history for horizon " << q << ": " << r.rows[*b].history << "\n";
    }
  }
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw DataError("cannot write " + out);
    r.write_table(os);
  }
  return 0;
}

int run_gradcheck(const ModelConfig& cfg, double step, double tolerance, std::size_t windows) {
  RawDataset raw;
  std::vector<ExternalFactorRecord> factors;
  if (cfg.flow_csv.empty()) {
    SyntheticSpec spec;
    spec.nodes = 3;
    spec.days = 10;
    spec.seed = cfg.seed;
    auto syn = generate_synthetic(spec);
    raw = std::move(syn.flows);
    factors = std::move(syn.factors);
  } else {
    raw = load_flow_csv(cfg.flow_csv);
    factors = load_factors(cfg.factors_csv);
  }
  const PreparedData d = prepare_data(cfg, raw, factors);
  Model model(cfg, d.nodes());
  std::vector<std::size_t> idx;
  const std::size_t count = std::min(windows, d.train.size());
  for (std::size_t k = 0; k < count; ++k) idx.push_back(k * d.train.size() / count);
  const Batch batch = make_batch(cfg, d.train, idx);
  const auto r = model_grad_check(model, batch, step);
  std::printf("checked %zu scalars, loss %.6g, floor %.3g\n", r.checked, r.loss, r.floor);
  std::printf("max relative error %.3e at %s[%lld] (analytic %.6e, numeric %.6e)\n",
              r.max_relative_error, r.worst_parameter.c_str(), static_cast<long long>(r.worst_index),
              r.analytic, r.numeric);
  const bool ok = r.max_relative_error <= tolerance;
  std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << tolerance << ")\n";
  return ok ? 0 : 3;
}

int run_plot(const std::vector<std::string>& reports, std::vector<std::string> labels,
             const std::string& metric, const std::string& forecast_path,
             const std::string& truth_path, const std::string& out) {
  if (reports.empty() && forecast_path.empty()) {
    throw ConfigError("plot: give --report and/or --forecast");
  }
  if (metric != "mse" && metric != "mae") throw ConfigError("plot: --metric must be mse or mae");
  fs::create_directories(out);
  if (!reports.empty()) {
    std::vector<std::pair<std::string, EvaluationReport>> labelled;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const std::string label = i < labels.size() ? labels[i] : fs::path(reports[i]).stem().string();
      labelled.emplace_back(label, read_report(reports[i]));
    }
    const fs::path p = fs::path(out) / ("periods_" + metric + ".svg");
    write_file(p, period_bar_chart_svg("error by period", metric, labelled));
    std::cout << "wrote " << p.string() << "\n";
  }
  if (!forecast_path.empty()) {
    const ForecastTable f = read_forecast(forecast_path);
    std::optional<RawDataset> truth;
    if (!truth_path.empty()) truth = load_flow_csv(truth_path);
    for (std::size_t n = 0; n < f.nodes.size(); ++n) {
      std::vector<std::pair<std::string, std::vector<double>>> series;
      if (truth) {
        auto it = std::find(truth->node_names.begin(), truth->node_names.end(), f.nodes[n]);
        if (it == truth->node_names.end()) throw DataError("truth file lacks node " + f.nodes[n]);
        const auto col = static_cast<Index>(it - truth->node_names.begin());
        // horizon-1 forecasts cover the last rows of the truth span
        const std::size_t len = f.values[n].size();
        if (len > truth->steps()) throw DataError("forecast is longer than the truth file");
        std::vector<double> t(len);
        for (std::size_t k = 0; k < len; ++k) {
          t[k] = truth->values(static_cast<Index>(truth->steps() - len + k), col);
        }
        series.emplace_back("truth", std::move(t));
      }
      series.emplace_back("forecast", f.values[n]);
      const fs::path p = fs::path(out) / ("forecast_" + f.nodes[n] + ".svg");
      write_file(p, line_chart_svg(f.nodes[n], series));
      std::cout << "wrote " << p.string() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal passenger-flow forecasting"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic flow and factor dataset");
  std::size_t s_nodes = 6, s_days = 60;
  std::uint64_t s_seed = 1;
  double s_coupling = 0.5;
  std::string s_start, s_out = "data";
  synth->add_option("--nodes", s_nodes, "number of nodes");
  synth->add_option("--days", s_days, "number of days (hourly steps)");
  synth->add_option("--seed", s_seed, "random seed");
  synth->add_option("--coupling", s_coupling, "lag-1 coupling within node pairs");
  synth->add_option("--start", s_start, "first day, YYYY-MM-DD");
  synth->add_option("--out", s_out, "output directory");

  auto* decompose = app.add_subcommand("decompose", "CEEMDAN-decompose every node of a flow file");
  std::string d_flow, d_out = "cache";
  ConfigArgs d_cfg;
  decompose->add_option("flow", d_flow, "flow CSV")->required();
  decompose->add_option("--out", d_out, "cache directory");
  add_config_args(decompose, d_cfg, false);

  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  ConfigArgs t_cfg;
  std::optional<std::size_t> t_epochs;
  add_config_args(train_cmd, t_cfg, true);
  train_cmd->add_option("--epochs", t_epochs, "cap on epochs (overrides max_epochs)");

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  std::string e_ckpt, e_data, e_factors, e_out;
  eval_cmd->add_option("--checkpoint", e_ckpt, "checkpoint JSON")->required();
  eval_cmd->add_option("--data", e_data, "flow CSV")->required();
  eval_cmd->add_option("--factors", e_factors, "external-factor CSV");
  eval_cmd->add_option("--out", e_out, "report path stem (writes .out and .json)");

  auto* predict_cmd = app.add_subcommand("predict", "write denormalized forecasts");
  std::string p_ckpt, p_data, p_factors, p_out;
  predict_cmd->add_option("--checkpoint", p_ckpt, "checkpoint JSON")->required();
  predict_cmd->add_option("--data", p_data, "flow CSV")->required();
  predict_cmd->add_option("--factors", p_factors, "external-factor CSV");
  predict_cmd->add_option("--out", p_out, "forecast CSV (stdout if omitted)");

  auto* sweep_cmd = app.add_subcommand("sweep", "train one model per history window size");
  ConfigArgs w_cfg;
  std::string w_sizes = "8,16,24", w_horizons, w_out;
  std::optional<std::size_t> w_epochs;
  add_config_args(sweep_cmd, w_cfg, true);
  sweep_cmd->add_option("--sizes", w_sizes, "comma-separated history sizes");
  sweep_cmd->add_option("--horizons", w_horizons, "comma-separated horizons (default: config)");
  sweep_cmd->add_option("--epochs", w_epochs, "cap on epochs per model");
  sweep_cmd->add_option("--out", w_out, "table CSV");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  ConfigArgs g_cfg;
  double g_step = 1e-6, g_tol = 1e-4;
  std::size_t g_windows = 3;
  add_config_args(grad_cmd, g_cfg, false);
  grad_cmd->add_option("--step", g_step, "central-difference step");
  grad_cmd->add_option("--tolerance", g_tol, "max relative error accepted");
  grad_cmd->add_option("--windows", g_windows, "training windows in the batch");

  auto* plot_cmd = app.add_subcommand("plot", "SVG charts of reports and forecasts");
  std::vector<std::string> l_reports, l_labels;
  std::string l_metric = "mse", l_forecast, l_truth, l_out = "plots";
  plot_cmd->add_option("--report", l_reports, "report file (.out or .json), repeatable");
  plot_cmd->add_option("--label", l_labels, "label per report, repeatable");
  plot_cmd->add_option("--metric", l_metric, "mse or mae");
  plot_cmd->add_option("--forecast", l_forecast, "forecast CSV from predict");
  plot_cmd->add_option("--truth", l_truth, "flow CSV to overlay");
  plot_cmd->add_option("--out", l_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(s_nodes, s_days, s_seed, s_coupling, s_start, s_out);
    if (*decompose) return run_decompose(d_flow, d_out, resolve_config(d_cfg));
    if (*train_cmd) return run_train(resolve_config(t_cfg), t_epochs);
    if (*eval_cmd) return run_evaluate(e_ckpt, e_data, e_factors, e_out);
    if (*predict_cmd) return run_predict(p_ckpt, p_data, p_factors, p_out);
    if (*sweep_cmd) return run_sweep(resolve_config(w_cfg), w_sizes, w_horizons, w_epochs, w_out);
    if (*grad_cmd) return run_gradcheck(resolve_config(g_cfg), g_step, g_tol, g_windows);
    if (*plot_cmd) return run_plot(l_reports, l_labels, l_metric, l_forecast, l_truth, l_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
