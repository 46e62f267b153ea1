#pragma once

// Checkpoint: config, parameters by name, normalization and factor scaling,
// node names and the training history, as JSON. Doubles are written with
// round-trip precision so a reload reproduces forward outputs bitwise.

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmst/train.hpp"

namespace mmst {

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> node_names;
  NormalizationStats stats;
  ExternalScaling external_scaling;
  std::vector<EpochLog> history;
  ParameterStore params;
};

inline Checkpoint make_checkpoint(const TrainResult& tr, const PreparedData& data) {
  return {tr.model.config(), data.raw.node_names, data.stats, data.external.scaling, tr.history,
          tr.model.params()};
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json j;
  j["format"] = "mmst-checkpoint-1";
  j["config"] = config_to_map(c.config);
  j["config_hash"] = config_hash(c.config);
  j["nodes"] = c.node_names;
  j["stats"] = {{"min", c.stats.min}, {"max", c.stats.max}};
  j["external_scaling"] = {{"min", c.external_scaling.min}, {"max", c.external_scaling.max}};
  auto& hist = j["history"] = nlohmann::json::array();
  for (const auto& e : c.history) {
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"validation_loss", e.validation_loss},
                    {"seconds", e.seconds}});
  }
  auto& params = j["params"] = nlohmann::json::array();
  for (const auto& p : c.params) {
    std::vector<double> data(p.value.data(), p.value.data() + p.value.size());
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()},
                      {"data", data}});
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "mmst-checkpoint-1") {
      throw DataError("not an mmst checkpoint (missing format tag)");
    }
    Checkpoint c;
    for (const auto& [key, value] : j.at("config").items()) {
      set_config_value(c.config, key, value.get<std::string>());
    }
    c.config.validate();
    if (j.at("config_hash").get<std::uint64_t>() != config_hash(c.config)) {
      throw DataError("checkpoint config hash does not match its config");
    }
    c.node_names = j.at("nodes").get<std::vector<std::string>>();
    c.stats.min = j.at("stats").at("min").get<std::vector<double>>();
    c.stats.max = j.at("stats").at("max").get<std::vector<double>>();
    c.external_scaling.min = j.at("external_scaling").at("min").get<std::array<double, 4>>();
    c.external_scaling.max = j.at("external_scaling").at("max").get<std::array<double, 4>>();
    for (const auto& e : j.at("history")) {
      c.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                           e.at("validation_loss").get<double>(), e.at("seconds").get<double>()});
    }
    for (const auto& p : j.at("params")) {
      const auto rows = p.at("rows").get<Index>();
      const auto cols = p.at("cols").get<Index>();
      const auto data = p.at("data").get<std::vector<double>>();
      if (static_cast<Index>(data.size()) != rows * cols) {
        throw DataError("checkpoint parameter " + p.at("name").get<std::string>() + " has wrong size");
      }
      c.params.add(p.at("name").get<std::string>(),
                   Eigen::Map<const ag::Matrix>(data.data(), rows, cols));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os << checkpoint_to_json(c).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

// Rebuilds the model and copies parameters in by name.
inline Model restore_model(const Checkpoint& c) {
  Model model(c.config, c.node_names.size());
  if (model.params().size() != c.params.size()) {
    throw DataError("checkpoint has " + std::to_string(c.params.size()) +
                    " parameters, model expects " + std::to_string(model.params().size()));
  }
  for (auto& p : model.params()) {
    const Parameter* saved = c.params.find(p.name);
    if (saved == nullptr) throw DataError("checkpoint lacks parameter " + p.name);
    if (saved->value.rows() != p.value.rows() || saved->value.cols() != p.value.cols()) {
      throw DataError("checkpoint parameter " + p.name + " has the wrong shape");
    }
    p.value = saved->value;
  }
  return model;
}

// Checks that a dataset carries every node the checkpoint was trained on,
// and reorders its columns to the checkpoint's node order.
inline RawDataset align_nodes(const RawDataset& ds, const std::vector<std::string>& expected) {
  std::vector<std::string> missing;
  std::vector<Index> cols;
  for (const auto& name : expected) {
    auto it = std::find(ds.node_names.begin(), ds.node_names.end(), name);
    if (it == ds.node_names.end()) {
      missing.push_back(name);
    } else {
      cols.push_back(static_cast<Index>(it - ds.node_names.begin()));
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("dataset is missing checkpoint nodes: " + list);
  }
  RawDataset out = ds;
  out.node_names = expected;
  out.values.resize(ds.values.rows(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.values.col(static_cast<Index>(k)) = ds.values.col(cols[k]);
  return out;
}

}  // namespace mmst
