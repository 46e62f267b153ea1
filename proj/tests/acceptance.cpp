// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmst/mmst.hpp"

using namespace mmst;
using ag::Index;
using ag::Matrix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix random_matrix(std::mt19937_64& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Random walk plus two cycles and white noise.
std::vector<Series> random_corpus() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pi = std::acos(-1.0);
  std::vector<Series> out;
  for (int k = 0; k < 20; ++k) {
    const double p1 = 6.0 + 30.0 * u(rng), p2 = 40.0 + 150.0 * u(rng);
    const double a1 = 0.5 + u(rng), a2 = 1.0 + 2.0 * u(rng);
    Series s(512);
    double walk = 0.0;
    for (std::size_t t = 0; t < s.size(); ++t) {
      walk += 0.1 * g(rng);
      const double x = static_cast<double>(t);
      s[t] = a1 * std::sin(2 * pi * x / p1) + a2 * std::cos(2 * pi * x / p2) + walk + 0.2 * g(rng);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void set_param(ParameterStore& store, const std::string& name, const Matrix& m) {
  store[store.slot(name)].value = m;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

// ---------------------------------------------------------------------------

Outcome ceemdan_completeness() {
  CeemdanConfig cfg;
  cfg.seed = 7;
  double worst = 0.0;
  std::size_t k = 0;
  for (const auto& s : random_corpus()) {
    cfg.seed = 7 + k++;
    worst = std::max(worst, ceemdan(s, cfg).reconstruction_error());
  }
  return {worst <= 1e-8, "max relative L2 error " + fmt("%.3g", worst) + " over 20 series"};
}

Outcome emd_exactness() {
  double worst = 0.0;
  for (const auto& s : random_corpus()) worst = std::max(worst, emd(s, 12).reconstruction_error());
  return {worst <= 1e-10, "max relative L2 error " + fmt("%.3g", worst)};
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.history = 6;
  cfg.horizon = 2;
  cfg.embed_dim = 8;
  cfg.node_embed_dim = 3;
  cfg.ceemdan.ensemble_size = 4;
  cfg.ceemdan.max_imfs = 2;
  cfg.tcn.num_blocks = 2;
  cfg.tcn.dropout = 0.0;
  cfg.peak.num_blocks = 2;
  cfg.attention.layers = 1;
  cfg.attention.dropout = 0.0;
  cfg.batch_size = 16;
  cfg.micro_batch = 8;
  cfg.max_epochs = 1;
  cfg.lr = 1e-2;
  cfg.loss.kind = LossKind::epel;
  cfg.seed = 5;
  return cfg;
}

const SyntheticData& tiny_data() {
  static const SyntheticData d = [] {
    SyntheticSpec spec;
    spec.nodes = 3;
    spec.days = 10;
    spec.seed = 11;
    return generate_synthetic(spec);
  }();
  return d;
}

Outcome gradient_oracle() {
  const ModelConfig cfg = tiny_config();
  Model m(cfg, 3);
  const auto data = prepare_data(cfg, tiny_data().flows, tiny_data().factors);
  const auto r = model_grad_check(m, make_batch(cfg, data.train, {0, 3, 7}), 1e-6);
  std::string d = "max relative error " + fmt("%.3g", r.max_relative_error) + " over " +
                  std::to_string(r.checked) + " parameters (worst " + r.worst_parameter + "[" +
                  std::to_string(r.worst_index) + "])";
  return {r.max_relative_error <= 1e-4 && r.checked == m.params().scalar_count(), d};
}

Outcome exact_values() {
  std::vector<std::string> failed;
  auto epel1 = [](double y, double yh) {
    Matrix a(1, 1), b(1, 1);
    a(0, 0) = y;
    b(0, 0) = yh;
    return epel(a, b);
  };
  if (std::fabs(epel1(0, 0) - 1.0) > 1e-9) failed.push_back("EPEL(0,0)");
  if (std::fabs(epel1(1, 1) - std::exp(2.0)) > 1e-9) failed.push_back("EPEL(1,1)");
  if (std::fabs(epel1(0.5, 0.3) - std::exp(1.2)) > 1e-9) failed.push_back("EPEL(0.5,0.3)");

  if (dilated_causal_conv({1, 2, 3, 4}, {1, 1}, 1) != std::vector<double>{1, 3, 5, 7}) failed.push_back("conv d=1");
  if (dilated_causal_conv({1, 2, 3, 4}, {1, 1}, 2) != std::vector<double>{1, 2, 4, 6}) failed.push_back("conv d=2");

  // E^d = I2: tanh(40) rounds to 1 and the data path is switched off.
  GraphRecurrentConfig gc;
  gc.nodes = 2;
  gc.input_channels = 1;
  gc.hidden = 3;
  gc.node_embed = 2;
  gc.degree_eps = 0.0;
  ParameterStore store;
  std::mt19937_64 rng(1);
  add_stdgcrn_params(store, "g", gc, rng);
  const std::string p = gcrn_layer_prefix("g", 0);
  set_param(store, p + ".node_embed", 40.0 * Matrix::Identity(2, 2));
  set_param(store, p + ".mlp1.w", Matrix::Zero(1, 2));
  set_param(store, p + ".mlp1.b", Matrix::Zero(1, 2));
  set_param(store, p + ".mlp2.w", Matrix::Zero(2, 2));
  set_param(store, p + ".mlp2.b", Matrix::Ones(1, 2));
  ag::Tape tape;
  ForwardContext ctx{tape, store, false, nullptr};
  const auto k = dynamic_kernel(ctx, p, gc, ctx.constant(random_matrix(rng, 2, 1)));
  if (k.dyn_embed.value() != Matrix::Identity(2, 2) || k.kernel.value() != 2.0 * Matrix::Identity(2, 2)) {
    failed.push_back("kernel 2I");
  }

  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Matrix y = random_matrix(rng, 4, 6);
    const Matrix yh = random_matrix(rng, 4, 6);
    worst = std::max(worst, std::fabs(quantile_loss(y, yh, 0.5) - 0.5 * mae(y, yh)));
  }
  if (worst > 1e-15) failed.push_back("quantile(0.5)");

  if (!failed.empty()) {
    std::string d = "failed:";
    for (const auto& f : failed) d += " " + f;
    return {false, d};
  }
  return {true, "EPEL, dilated conv, 2I kernel, median pinball all exact"};
}

Outcome structural_invariants() {
  std::vector<std::string> failed;
  std::mt19937_64 rng(31);

  // Kernel symmetry and gate ranges on random cells.
  double asym = 0.0;
  bool gates = true;
  for (int trial = 0; trial < 10; ++trial) {
    GraphRecurrentConfig gc;
    gc.nodes = 5;
    gc.input_channels = 3;
    gc.hidden = 4;
    gc.node_embed = 6;
    ParameterStore store;
    add_stdgcrn_params(store, "g", gc, rng);
    set_param(store, "g.layer0.node_embed", random_matrix(rng, 5, 6, -2.0, 2.0));
    ag::Tape tape;
    ForwardContext ctx{tape, store, false, nullptr};
    const auto s = stdgcru_step(ctx, "g.layer0", gc, ctx.constant(random_matrix(rng, 15, 3, -3.0, 3.0)),
                                ctx.constant(random_matrix(rng, 15, 4)));
    const Matrix& g = s.graph.kernel.value();
    for (Index b = 0; b < 3; ++b) {
      const Matrix blk = g.middleRows(b * 5, 5);
      asym = std::max(asym, max_abs(blk - blk.transpose()));
    }
    for (const Var* v : {&s.reset, &s.update}) {
      gates = gates && v->value().minCoeff() > 0.0 && v->value().maxCoeff() < 1.0;
    }
    gates = gates && s.candidate.value().cwiseAbs().maxCoeff() < 1.0;
  }
  if (asym > 1e-12) failed.push_back("kernel symmetry " + fmt("%.3g", asym));
  if (!gates) failed.push_back("gate range");

  // Softmax rows: channel attention maps, stream weights, self-attention.
  double row_dev = 0.0;
  auto check_rows = [&row_dev](const Matrix& m) {
    row_dev = std::max(row_dev, (m.rowwise().sum().array() - 1.0).abs().maxCoeff());
  };
  {
    const ModelConfig cfg = tiny_config();
    Model m(cfg, 3);
    const auto data = prepare_data(cfg, tiny_data().flows, tiny_data().factors);
    ag::Tape tape;
    ForwardContext ctx{tape, m.params(), false, nullptr};
    ForwardTrace trace;
    m.forward(ctx, make_batch(cfg, data.train, {0, 1, 2, 3}), &trace);
    for (const auto& am : trace.fusion.attention) check_rows(am.value());
    check_rows(trace.fusion.weights.value());
    for (const auto& layer : trace.attention_weights) {
      for (const auto& w : layer) check_rows(w);
    }
    if (trace.fusion.attention.empty() || trace.attention_weights.empty()) failed.push_back("no softmax traced");
  }
  if (row_dev > 1e-12) failed.push_back("softmax row sums " + fmt("%.3g", row_dev));

  // Zero-initialized TCN stack is the identity.
  {
    TcnStackConfig tc;
    tc.num_blocks = 12;
    tc.dropout = 0.0;
    ParameterStore store;
    add_tcn_params(store, "tcn", tc, 5, rng);
    store.set_zero();
    const Matrix x = random_matrix(rng, 24, 5);
    ag::Tape tape;
    ForwardContext ctx{tape, store, false, nullptr};
    const Matrix out = history_enhance(ctx, "tcn", tc, tape.constant(x)).value();
    bool exact = out.rows() == 24 * 5 && out.cols() == 12;
    for (Index t = 0; exact && t < 24; ++t) {
      for (Index j = 0; j < 5; ++j) {
        for (Index c = 0; c < 12; ++c) exact = exact && out(t * 5 + j, c) == x(t, j);
      }
    }
    if (!exact) failed.push_back("tcn identity");
  }

  // Identical streams are a fixed point of channel fusion.
  {
    ParameterStore store;
    add_channel_attention_params(store, "ca", 3, 8, rng);
    const Matrix x = random_matrix(rng, 4 * 2 * 3, 5);
    ag::Tape tape;
    ForwardContext ctx{tape, store, false, nullptr};
    auto v = ctx.constant(x);
    const double dev = max_abs(channel_attention_fuse(ctx, "ca", {v, v, v}, 3).fused.value() - x);
    if (dev > 1e-10) failed.push_back("fusion fixed point " + fmt("%.3g", dev));
  }

  // Checkpoint round trip.
  {
    const ModelConfig cfg = tiny_config();
    const auto data = prepare_data(cfg, tiny_data().flows, tiny_data().factors);
    const auto tr = train(cfg, data);
    const auto dir = std::filesystem::temp_directory_path() / "mmst_acceptance";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "ckpt.json").string();
    save_checkpoint(path, make_checkpoint(tr, data));
    const Model restored = restore_model(load_checkpoint(path));
    bool same = restored.params().size() == tr.model.params().size();
    for (std::size_t i = 0; same && i < restored.params().size(); ++i) {
      same = restored.params()[i].name == tr.model.params()[i].name &&
             restored.params()[i].value == tr.model.params()[i].value;
    }
    same = same && predict_windows(restored, data.test) == predict_windows(tr.model, data.test);
    if (!same) failed.push_back("checkpoint round trip");
  }

  if (!failed.empty()) {
    std::string d = "failed:";
    for (const auto& f : failed) d += " " + f + ";";
    return {false, d};
  }
  return {true, "kernel asymmetry " + fmt("%.2g", asym) + ", softmax row error " + fmt("%.2g", row_dev) +
                    ", tcn identity, fusion fixed point, checkpoint bitwise"};
}

// Shared desk-scale training setup for the directional runs.
ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.history = 24;
  cfg.horizon = 1;
  cfg.embed_dim = 64;
  cfg.node_embed_dim = 8;
  cfg.ceemdan.ensemble_size = 20;
  cfg.ceemdan.max_imfs = 3;
  cfg.tcn.num_blocks = 6;
  cfg.peak.num_blocks = 3;
  cfg.batch_size = 32;
  cfg.micro_batch = 32;
  cfg.lr = 1e-3;
  cfg.max_epochs = 50;
  cfg.loss.kind = LossKind::mse;
  cfg.seed = 1;
  return cfg;
}

double test_mse(const ModelConfig& cfg, const SyntheticData& syn, std::size_t* epochs = nullptr) {
  const PreparedData data = prepare_data(cfg, syn.flows, syn.factors);
  const TrainResult tr = train(cfg, data);
  if (epochs) *epochs = tr.history.size();
  return *evaluate_model(tr.model, data, data.test)["entire"].mse;
}

Outcome directional_vs_gru() {
  const SyntheticData syn = generate_synthetic(SyntheticSpec{});  // N=6, 60 days, coupling 0.5, seed 1
  ModelConfig full = desk_config();
  ModelConfig gru = desk_config();
  gru.model = ModelKind::gru;
  std::size_t ef = 0, eg = 0;
  const double mf = test_mse(full, syn, &ef);
  const double mg = test_mse(gru, syn, &eg);
  const double ratio = mf / mg;
  return {ratio <= 0.9, "full " + fmt("%.6g", mf) + " (" + std::to_string(ef) + " epochs) vs GRU " +
                            fmt("%.6g", mg) + " (" + std::to_string(eg) + " epochs), ratio " +
                            fmt("%.3f", ratio) + " (needs <= 0.9)"};
}

// Mean absolute error on each node's top-decile true test values.
double peak_mask_mae(const Model& model, const PreparedData& data) {
  const Matrix pred = predict_windows(model, data.test);
  const Matrix truth = stack_targets(data.test);
  double sum = 0.0;
  std::size_t count = 0;
  for (Index n = 0; n < truth.cols(); ++n) {
    std::vector<double> col(truth.col(n).data(), truth.col(n).data() + truth.rows());
    std::sort(col.begin(), col.end());
    const double cut = col[static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(col.size() - 1)))];
    for (Index r = 0; r < truth.rows(); ++r) {
      if (truth(r, n) >= cut) {
        sum += std::fabs(pred(r, n) - truth(r, n));
        ++count;
      }
    }
  }
  return sum / static_cast<double>(count);
}

Outcome loss_ablation() {
  int wins = 0;
  std::string d;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.nodes = 6;
    spec.days = 80;
    spec.seed = seed;
    // Labor Day falls in the training span, Dragon Boat Festival in the test span.
    spec.start = std::chrono::year{2023} / std::chrono::April / 10;
    const SyntheticData syn = generate_synthetic(spec);
    double mae_by_loss[2] = {0.0, 0.0};
    const LossKind kinds[2] = {LossKind::epel, LossKind::mse};
    for (int k = 0; k < 2; ++k) {
      ModelConfig cfg = desk_config();
      cfg.embed_dim = 16;
      cfg.max_epochs = 20;
      cfg.loss.kind = kinds[k];
      cfg.seed = seed;
      const PreparedData data = prepare_data(cfg, syn.flows, syn.factors);
      const TrainResult tr = train(cfg, data);
      mae_by_loss[k] = peak_mask_mae(tr.model, data);
    }
    const bool win = mae_by_loss[0] <= mae_by_loss[1];
    wins += win ? 1 : 0;
    d += (d.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " " +
         fmt("%.4g", mae_by_loss[0]) + (win ? "<=" : ">") + fmt("%.4g", mae_by_loss[1]);
  }
  return {wins >= 3, std::to_string(wins) + "/5 seeds EPEL peak MAE <= MSE (" + d + ")"};
}

Outcome ablation_harness() {
  SyntheticSpec spec;
  spec.days = 30;
  const SyntheticData syn = generate_synthetic(spec);
  std::string bad;
  for (const auto& name : variant_names()) {
    ModelConfig cfg = apply_variant(desk_config(), name);
    cfg.embed_dim = 16;
    cfg.max_epochs = 1;
    try {
      const PreparedData data = prepare_data(cfg, syn.flows, syn.factors);
      const TrainResult tr = train(cfg, data);
      const auto rep = evaluate_model(tr.model, data, data.test);
      std::stringstream ss;
      rep.write_text(ss);
      if (!rep["entire"].mse || ss.str().empty()) bad += " " + name;
    } catch (const std::exception& e) {
      bad += " " + name + " (" + e.what() + ")";
    }
  }
  if (!bad.empty()) return {false, "failed:" + bad};
  return {true, std::to_string(variant_names().size()) + " variants trained one epoch and reported"};
}

Outcome window_sweep() {
  SyntheticSpec spec;
  spec.days = 30;
  const SyntheticData syn = generate_synthetic(spec);
  ModelConfig cfg = desk_config();
  cfg.embed_dim = 16;
  TrainOptions opts;
  opts.max_epochs = 3;
  const auto r = sweep_windows(cfg, syn.flows, syn.factors, {8, 16, 24}, {1}, opts);
  const auto best = r.best(1);
  std::stringstream table;
  r.write_table(table);
  bool ok = r.rows.size() == 3 && best.has_value();
  for (const auto& row : r.rows) ok = ok && best && r.rows[*best].mse <= row.mse;
  std::string d = std::to_string(r.rows.size()) + " rows";
  if (best) d += ", argmin P=" + std::to_string(r.rows[*best].history) + " (reference optimum P=24)";
  std::string flat = table.str();
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  return {ok, d + "; " + flat};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
  double budget_seconds;  // 0: no runtime bound
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "ceemdan completeness", ceemdan_completeness, 60},
      {2, "emd exactness", emd_exactness, 0},
      {3, "gradient oracle", gradient_oracle, 300},
      {4, "exact values", exact_values, 0},
      {5, "structural invariants", structural_invariants, 0},
      {6, "directional training vs GRU", directional_vs_gru, 1800},
      {7, "loss ablation direction", loss_ablation, 2700},
      {8, "ablation harness", ablation_harness, 900},
      {9, "window sweep", window_sweep, 0},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_seconds) + " s budget";
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fmt("%.1f", secs) << " s)" << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
