#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "bermo/model.hpp"

namespace bermo {

/// Checkpoint manifest (JSON, format "bermo-checkpoint", version 1):
///
///   {
///     "format": "bermo-checkpoint",
///     "version": 1,
///     "model": { ...ModelConfig... },
///     "eval_threshold": 0.1,          // mask threshold for evaluation
///     "parameters": [ {"name": "...", "group": "weights", "shape": [..],
///                      "values": [..]}, ... ]
///   }
///
/// Values are written with round-trip precision so a save/load cycle is
/// bit-exact. Combine-block scalars use the reserved "combine." prefix.
inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_json(const BermoModel& model, double eval_threshold);
void save_checkpoint(const BermoModel& model, double eval_threshold, const std::filesystem::path& path);

struct LoadedCheckpoint {
  BermoModel model;
  double eval_threshold = 1.0;
};

/// Throws IoError for a missing or unreadable file and ConfigError for a
/// malformed manifest (unknown format, missing or mis-shaped parameters).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint checkpoint_from_json(const nlohmann::json& j);

}  // namespace bermo
