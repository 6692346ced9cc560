#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "bermo/train.hpp"

namespace bermo {

/// Run configuration file: a flat JSON object keyed by the hyperparameter
/// names (snake_case) plus nested "model" and "task" objects. Every key is
/// optional; unknown keys are rejected. `to_json` always writes every key, so
/// dumping and reloading a resolved configuration is the identity.
nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SyntheticTask& task);
SyntheticTask task_from_json(const nlohmann::json& j);

/// Names accepted as command-line overrides: every top-level key plus
/// shortcuts into "task" and "model" (task_kind, train_size, val_size,
/// test_size, task_seed, num_classes, num_layers, hidden_dim, num_heads,
/// ffn_dim, mask_scope, combine_dropout).
const std::vector<std::string>& override_keys();

/// Sets `key` in a to_json(RunConfig) document from its command-line text.
/// Strings are taken verbatim; other values are parsed as JSON ("null"
/// clears optional values). Throws ConfigError for unknown keys or values of
/// the wrong type.
void apply_override(nlohmann::json& doc, const std::string& key, const std::string& text);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace bermo
