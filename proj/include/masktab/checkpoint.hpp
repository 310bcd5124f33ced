#pragma once

// Model checkpoint: the network plus enough context to refuse a dataset it
// was not trained on.
//
//   {"format": "masktab-checkpoint", "version": 1,
//    "model": "baseline" | "pretrained-frozen" | "pretrained-unfrozen",
//    "feature_names": [...], "response_names": [...],
//    "train_config": {...}, "network": {masktab-network v1}}

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/data_model.hpp"
#include "masktab/error.hpp"
#include "masktab/hash.hpp"
#include "masktab/nn.hpp"
#include "masktab/trainer.hpp"

namespace masktab {

inline constexpr const char* kModelBaseline = "baseline";
inline constexpr const char* kModelFrozen = "pretrained-frozen";
inline constexpr const char* kModelUnfrozen = "pretrained-unfrozen";

inline bool is_known_model(const std::string& m) {
  return m == kModelBaseline || m == kModelFrozen || m == kModelUnfrozen;
}

struct Checkpoint {
  std::string model;
  std::vector<std::string> feature_names;
  std::vector<std::string> response_names;
  TrainConfig config;
  nn::NetworkParams params;

  void check_compatible(const TabularDataset& ds) const {
    if (ds.schema.column_names() != feature_names)
      throw DataError("checkpoint '" + model + "' was trained on different feature columns");
    if (ds.response_names != response_names)
      throw DataError("checkpoint '" + model + "' was trained on different responses");
  }
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", "masktab-checkpoint"},
          {"version", 1},
          {"model", c.model},
          {"feature_names", c.feature_names},
          {"response_names", c.response_names},
          {"train_config", train_config_to_json(c.config)},
          {"network", nn::network_to_json(c.params)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "masktab-checkpoint") throw DataError("not a masktab checkpoint");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version " + j.at("version").dump());
    Checkpoint c{j.at("model").get<std::string>(),
                 j.at("feature_names").get<std::vector<std::string>>(),
                 j.at("response_names").get<std::vector<std::string>>(),
                 train_config_from_json(j.at("train_config")),
                 nn::network_from_json(j.at("network"))};
    if (c.params.input_dim() != c.feature_names.size())
      throw DataError("checkpoint network input does not match its feature list");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file(path, checkpoint_to_json(c).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("cannot parse checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace masktab
