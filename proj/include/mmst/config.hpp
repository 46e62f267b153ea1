#pragma once

// Run configuration: every hyperparameter, ablation switch and data path.
// Text form is one `key = value` per line, `#` starts a comment, and an
// unknown key is an error.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mmst/calendar.hpp"
#include "mmst/decomposition.hpp"
#include "mmst/external.hpp"
#include "mmst/fusion_attention.hpp"
#include "mmst/losses_metrics.hpp"
#include "mmst/stdgcrn.hpp"
#include "mmst/temporal_enhance.hpp"

namespace mmst {

enum class ModelKind { mmst, gru, lstm };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::mmst: return "mmst";
    case ModelKind::gru: return "gru";
    case ModelKind::lstm: return "lstm";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "mmst") return ModelKind::mmst;
  if (s == "gru") return ModelKind::gru;
  if (s == "lstm") return ModelKind::lstm;
  throw ConfigError("unsupported model '" + s + "' (supported: mmst, gru, lstm)");
}

enum class DecompositionScope { window, split };

struct ModelConfig {
  ModelKind model = ModelKind::mmst;
  std::size_t history = 24;  // P
  std::size_t horizon = 1;   // Q
  std::size_t embed_dim = 128;
  std::size_t node_embed_dim = 16;
  std::size_t output_dim = 1;

  CeemdanConfig ceemdan{};  // max_imfs is m
  DecompositionScope decomposition_scope = DecompositionScope::window;
  TcnStackConfig tcn{};
  PeakStackConfig peak{};
  bool enhance_decomposed = false;

  std::size_t gcrn_layers = 1;
  DegreeMode degree_mode = DegreeMode::weighted;
  double degree_eps = 1e-6;

  SelfAttentionConfig attention{};
  std::size_t fusion_hidden = 8;

  LossConfig loss{};
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 128;
  std::size_t micro_batch = 32;
  std::size_t max_epochs = 200;
  std::size_t early_stop_patience = 6;
  double grad_clip = 5.0;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
  std::size_t stride = 1;

  bool use_decomposition = true;
  bool use_history_enhance = true;
  bool use_peak_amplify = true;
  bool use_dynamic_graph = true;
  bool use_channel_attention = true;
  bool use_self_attention = true;

  std::uint64_t seed = 1;

  std::string flow_csv;
  std::string factors_csv;
  std::string output_dir = "run";
  std::vector<HolidayRange> holidays = default_holidays();
  std::vector<std::string> weather_vocabulary = default_weather_vocabulary();

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
    };
    positive(history, "history");
    positive(horizon, "horizon");
    positive(embed_dim, "embed_dim");
    positive(node_embed_dim, "node_embed_dim");
    positive(output_dim, "output_dim");
    positive(gcrn_layers, "gcrn_layers");
    positive(fusion_hidden, "fusion_hidden");
    positive(batch_size, "batch_size");
    positive(micro_batch, "micro_batch");
    positive(max_epochs, "max_epochs");
    positive(early_stop_patience, "early_stop_patience");
    positive(stride, "stride");
    ceemdan.validate();
    tcn.validate();
    peak.validate();
    loss.validate();
    if (model == ModelKind::mmst && use_self_attention && embed_dim % 2 != 0) {
      throw ConfigError("embed_dim must be even for the positional encoding");
    }
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ConfigError("train_fraction must be in (0,1)");
    }
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must be in (0,1)");
    }
    if (attention.dropout < 0.0 || attention.dropout >= 1.0) {
      throw ConfigError("attention_dropout must be in [0,1)");
    }
    if (enhance_decomposed && !use_decomposition) {
      throw ConfigError("enhance_decomposed needs use_decomposition = true");
    }
    if (enhance_decomposed && !use_history_enhance && !use_peak_amplify) {
      throw ConfigError("enhance_decomposed has no effect without history or peak streams");
    }
  }
};

// Named ablation variants. "full" enables everything.
inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"ND",   "NH",   "NP",  "NDH", "NDP",
                                                 "NHP",  "NDHP", "NDG", "NCA", "NSA"};
  return names;
}

inline ModelConfig apply_variant(ModelConfig cfg, const std::string& name) {
  cfg.model = ModelKind::mmst;
  cfg.use_decomposition = cfg.use_history_enhance = cfg.use_peak_amplify = true;
  cfg.use_dynamic_graph = cfg.use_channel_attention = cfg.use_self_attention = true;
  if (name == "full") return cfg;
  if (name.size() < 2 || name[0] != 'N') throw ConfigError("unknown variant '" + name + "'");
  const std::string tail = name.substr(1);
  if (tail == "DG") {
    cfg.use_dynamic_graph = false;
  } else if (tail == "CA") {
    cfg.use_channel_attention = false;
  } else if (tail == "SA") {
    cfg.use_self_attention = false;
  } else {
    for (char c : tail) {
      if (c == 'D') cfg.use_decomposition = false;
      else if (c == 'H') cfg.use_history_enhance = false;
      else if (c == 'P') cfg.use_peak_amplify = false;
      else throw ConfigError("unknown variant '" + name + "'");
    }
  }
  cfg.enhance_decomposed = cfg.enhance_decomposed && cfg.use_decomposition;
  return cfg;
}

// ---------------------------------------------------------------------------
// Key/value form

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace config_detail

// Accessor table: one entry per key, in file order.
struct ConfigKey {
  std::string name;
  std::function<std::string(const ModelConfig&)> get;
  std::function<void(ModelConfig&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
  using config_detail::fmt;
  auto parse_size = [](const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
  };
  auto parse_real = [](const std::string& key, const std::string& v) {
    auto d = csv::parse_double(v);
    if (!d) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    return *d;
  };
  auto parse_bool = [](const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
  };
  auto b2s = [](bool b) { return std::string(b ? "true" : "false"); };

#define MMST_SIZE_KEY(name, field)                                                   \
  ConfigKey{name, [](const ModelConfig& c) { return std::to_string(c.field); },       \
            [parse_size](ModelConfig& c, const std::string& v) { c.field = parse_size(name, v); }}
#define MMST_REAL_KEY(name, field)                                                   \
  ConfigKey{name, [](const ModelConfig& c) { return config_detail::fmt(c.field); },   \
            [parse_real](ModelConfig& c, const std::string& v) { c.field = parse_real(name, v); }}
#define MMST_BOOL_KEY(name, field)                                                   \
  ConfigKey{name, [b2s](const ModelConfig& c) { return b2s(c.field); },               \
            [parse_bool](ModelConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}
#define MMST_TEXT_KEY(name, field)                                                   \
  ConfigKey{name, [](const ModelConfig& c) { return c.field; },                       \
            [](ModelConfig& c, const std::string& v) { c.field = v; }}

  static const std::vector<ConfigKey> keys = {
      ConfigKey{"model", [](const ModelConfig& c) { return to_string(c.model); },
                [](ModelConfig& c, const std::string& v) { c.model = parse_model_kind(v); }},
      MMST_SIZE_KEY("history", history),
      MMST_SIZE_KEY("horizon", horizon),
      MMST_SIZE_KEY("embed_dim", embed_dim),
      MMST_SIZE_KEY("node_embed_dim", node_embed_dim),
      MMST_SIZE_KEY("output_dim", output_dim),
      MMST_SIZE_KEY("max_imfs", ceemdan.max_imfs),
      MMST_SIZE_KEY("ensemble_size", ceemdan.ensemble_size),
      MMST_REAL_KEY("noise_ratio", ceemdan.noise_ratio),
      MMST_REAL_KEY("sift_threshold", ceemdan.sift.sd_threshold),
      ConfigKey{"sift_max_iterations",
                [](const ModelConfig& c) { return std::to_string(c.ceemdan.sift.max_iterations); },
                [parse_size](ModelConfig& c, const std::string& v) {
                  c.ceemdan.sift.max_iterations = static_cast<int>(parse_size("sift_max_iterations", v));
                }},
      ConfigKey{"decomposition_scope",
                [](const ModelConfig& c) {
                  return std::string(c.decomposition_scope == DecompositionScope::window ? "window" : "split");
                },
                [](ModelConfig& c, const std::string& v) {
                  if (v == "window") c.decomposition_scope = DecompositionScope::window;
                  else if (v == "split") c.decomposition_scope = DecompositionScope::split;
                  else throw ConfigError("decomposition_scope must be window or split, got '" + v + "'");
                }},
      MMST_SIZE_KEY("tcn_blocks", tcn.num_blocks),
      MMST_SIZE_KEY("tcn_layers", tcn.layers_per_block),
      MMST_REAL_KEY("tcn_dropout", tcn.dropout),
      MMST_SIZE_KEY("peak_blocks", peak.num_blocks),
      MMST_BOOL_KEY("enhance_decomposed", enhance_decomposed),
      MMST_SIZE_KEY("gcrn_layers", gcrn_layers),
      ConfigKey{"degree_mode",
                [](const ModelConfig& c) {
                  return std::string(c.degree_mode == DegreeMode::weighted ? "weighted" : "binary");
                },
                [](ModelConfig& c, const std::string& v) {
                  if (v == "weighted") c.degree_mode = DegreeMode::weighted;
                  else if (v == "binary") c.degree_mode = DegreeMode::binary;
                  else throw ConfigError("degree_mode must be weighted or binary, got '" + v + "'");
                }},
      MMST_REAL_KEY("degree_eps", degree_eps),
      MMST_SIZE_KEY("attention_layers", attention.layers),
      MMST_REAL_KEY("attention_dropout", attention.dropout),
      MMST_SIZE_KEY("fusion_hidden", fusion_hidden),
      ConfigKey{"loss", [](const ModelConfig& c) { return to_string(c.loss.kind); },
                [](ModelConfig& c, const std::string& v) { c.loss.kind = parse_loss_kind(v); }},
      MMST_REAL_KEY("tau", loss.tau),
      MMST_REAL_KEY("epel_p", loss.p),
      MMST_REAL_KEY("epel_q", loss.q),
      ConfigKey{"optimizer", [](const ModelConfig&) { return std::string("adamw"); },
                [](ModelConfig&, const std::string& v) {
                  if (v != "adamw") throw ConfigError("optimizer must be adamw, got '" + v + "'");
                }},
      MMST_REAL_KEY("lr", lr),
      MMST_REAL_KEY("weight_decay", weight_decay),
      MMST_SIZE_KEY("batch_size", batch_size),
      MMST_SIZE_KEY("micro_batch", micro_batch),
      MMST_SIZE_KEY("max_epochs", max_epochs),
      MMST_SIZE_KEY("early_stop_patience", early_stop_patience),
      MMST_REAL_KEY("grad_clip", grad_clip),
      MMST_REAL_KEY("train_fraction", train_fraction),
      MMST_REAL_KEY("validation_fraction", validation_fraction),
      MMST_SIZE_KEY("stride", stride),
      MMST_BOOL_KEY("use_decomposition", use_decomposition),
      MMST_BOOL_KEY("use_history_enhance", use_history_enhance),
      MMST_BOOL_KEY("use_peak_amplify", use_peak_amplify),
      MMST_BOOL_KEY("use_dynamic_graph", use_dynamic_graph),
      MMST_BOOL_KEY("use_channel_attention", use_channel_attention),
      MMST_BOOL_KEY("use_self_attention", use_self_attention),
      ConfigKey{"seed", [](const ModelConfig& c) { return std::to_string(c.seed); },
                [parse_size](ModelConfig& c, const std::string& v) { c.seed = parse_size("seed", v); }},
      MMST_TEXT_KEY("flow_csv", flow_csv),
      MMST_TEXT_KEY("factors_csv", factors_csv),
      MMST_TEXT_KEY("output_dir", output_dir),
      // name:YYYY-MM-DD..YYYY-MM-DD entries separated by ';'
      ConfigKey{"holidays",
                [](const ModelConfig& c) {
                  std::string s;
                  for (const auto& h : c.holidays) {
                    if (!s.empty()) s += "; ";
                    s += h.name + ":" + format_date(h.first) + ".." + format_date(h.last);
                  }
                  return s;
                },
                [](ModelConfig& c, const std::string& v) {
                  c.holidays.clear();
                  for (const auto& item : config_detail::split(v, ';')) {
                    const auto colon = item.rfind(':');
                    const auto dots = item.find("..", colon == std::string::npos ? 0 : colon);
                    if (colon == std::string::npos || dots == std::string::npos) {
                      throw ConfigError("holidays entry '" + item + "': expected name:YYYY-MM-DD..YYYY-MM-DD");
                    }
                    HolidayRange r{config_detail::trim(item.substr(0, colon)),
                                   parse_date(config_detail::trim(item.substr(colon + 1, dots - colon - 1))),
                                   parse_date(config_detail::trim(item.substr(dots + 2)))};
                    if (std::chrono::sys_days{r.last} < std::chrono::sys_days{r.first}) {
                      throw ConfigError("holidays entry '" + item + "': range ends before it starts");
                    }
                    c.holidays.push_back(std::move(r));
                  }
                }},
      ConfigKey{"weather_vocabulary",
                [](const ModelConfig& c) {
                  std::string s;
                  for (const auto& w : c.weather_vocabulary) s += (s.empty() ? "" : ",") + w;
                  return s;
                },
                [](ModelConfig& c, const std::string& v) {
                  c.weather_vocabulary = config_detail::split(v, ',');
                  if (c.weather_vocabulary.empty()) throw ConfigError("weather_vocabulary is empty");
                }},
  };
#undef MMST_SIZE_KEY
#undef MMST_REAL_KEY
#undef MMST_BOOL_KEY
#undef MMST_TEXT_KEY
  return keys;
}

inline void set_config_value(ModelConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::map<std::string, std::string> config_to_map(const ModelConfig& cfg) {
  std::map<std::string, std::string> m;
  for (const auto& k : config_keys()) m[k.name] = k.get(cfg);
  return m;
}

inline ModelConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  ModelConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = config_detail::trim(line.substr(0, eq));
    try {
      set_config_value(cfg, key, config_detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in, path);
}

inline void write_config(std::ostream& out, const ModelConfig& cfg) {
  for (const auto& k : config_keys()) out << k.name << " = " << k.get(cfg) << "\n";
}

// FNV-1a over the canonical text of the model-defining keys (paths excluded).
inline std::uint64_t config_hash(const ModelConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& k : config_keys()) {
    if (k.name == "flow_csv" || k.name == "factors_csv" || k.name == "output_dir") continue;
    const std::string line = k.name + "=" + k.get(cfg) + "\n";
    for (unsigned char ch : line) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace mmst
