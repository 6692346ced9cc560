#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>

#include "bermo/train.hpp"

namespace bermo {

/// Metrics stream: newline-delimited JSON, one object per event. Every record
/// carries "schema": "bermo.metrics", "schema_version" and "event", one of
///
///   run_start  {run, seed, config}
///   step       {run, step, loss, threshold}
///   epoch      {run, epoch, step, train_loss, eval_accuracy, gamma,
///               combine_weights, sparsity: {step, v,
///               retained_fraction_per_layer, global_retained_fraction,
///               total_parameter_fraction, retained_weights, prunable_weights}}
///   run_end    {run, test_accuracy, diverged, wall_seconds, final_gamma,
///               final_combine_weights, final_sparsity}
///
/// Non-finite numbers are written as null and read back as NaN.
inline constexpr const char* kMetricsSchema = "bermo.metrics";
inline constexpr int kMetricsSchemaVersion = 1;

/// Append-only writer; safe to share between concurrent runs.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  explicit MetricsWriter(std::ostream& out);

  void write(nlohmann::json record);

 private:
  std::mutex mutex_;
  std::ofstream file_;
  std::ostream* out_;
};

nlohmann::json to_json(const SparsityReport& report, std::size_t step, double threshold);
SparsityReport sparsity_from_json(const nlohmann::json& j);

/// Full record (per-step losses, per-epoch rows, final summary).
nlohmann::json to_json(const RunRecord& record);

/// Rebuilds one RunRecord per run label from a metrics stream.
std::map<std::string, RunRecord> replay_metrics(std::istream& in);
std::map<std::string, RunRecord> replay_metrics(const std::filesystem::path& path);

}  // namespace bermo
