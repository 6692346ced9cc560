#include "bermo/metrics.hpp"

#include <cmath>
#include <istream>
#include <limits>

#include "bermo/error.hpp"

namespace bermo {

using nlohmann::json;

namespace {

double number(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

std::vector<double> numbers(const json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(number(x));
  return out;
}

}  // namespace

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : file_(path, std::ios::app), out_(&file_) {
  if (!file_) throw IoError("cannot open metrics stream " + path.string());
}

MetricsWriter::MetricsWriter(std::ostream& out) : out_(&out) {}

void MetricsWriter::write(json record) {
  json line = {{"schema", kMetricsSchema}, {"schema_version", kMetricsSchemaVersion}};
  line.update(record);
  const std::string text = line.dump();
  std::lock_guard lock(mutex_);
  *out_ << text << '\n';
  out_->flush();
}

json to_json(const SparsityReport& r, std::size_t step, double threshold) {
  return {{"step", step},
          {"v", threshold},
          {"retained_fraction_per_layer", r.retained_fraction_per_layer},
          {"global_retained_fraction", r.global_retained_fraction},
          {"total_parameter_fraction", r.total_parameter_fraction},
          {"retained_weights", r.retained_weights},
          {"prunable_weights", r.prunable_weights}};
}

SparsityReport sparsity_from_json(const json& j) {
  SparsityReport r;
  r.retained_fraction_per_layer = numbers(j.at("retained_fraction_per_layer"));
  r.global_retained_fraction = number(j.at("global_retained_fraction"));
  r.total_parameter_fraction = number(j.at("total_parameter_fraction"));
  r.retained_weights = j.at("retained_weights").get<std::size_t>();
  r.prunable_weights = j.at("prunable_weights").get<std::size_t>();
  return r;
}

json to_json(const RunRecord& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"step", e.step},
                      {"train_loss", e.train_loss},
                      {"eval_accuracy", e.eval_accuracy},
                      {"gamma", e.gamma},
                      {"combine_weights", e.combine_weights},
                      {"sparsity", to_json(e.sparsity, e.step, e.threshold)}});
  }
  return {{"run", r.label},
          {"seed", r.seed},
          {"step_losses", r.step_losses},
          {"epochs", std::move(epochs)},
          {"test_accuracy", r.test_accuracy},
          {"diverged", r.diverged},
          {"wall_seconds", r.wall_seconds},
          {"final_gamma", r.final_gamma},
          {"final_combine_weights", r.final_combine_weights},
          {"final_sparsity", to_json(r.final_sparsity, r.epochs.empty() ? 0 : r.epochs.back().step,
                                     r.epochs.empty() ? 1.0 : r.epochs.back().threshold)}};
}

std::map<std::string, RunRecord> replay_metrics(std::istream& in) {
  std::map<std::string, RunRecord> runs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("metrics line " + std::to_string(line_no) + " is not JSON: " + e.what());
    }
    if (j.value("schema", "") != kMetricsSchema) continue;
    if (j.value("schema_version", 0) != kMetricsSchemaVersion) {
      throw IoError("metrics line " + std::to_string(line_no) + " has unsupported schema version");
    }
    const std::string event = j.value("event", "");
    if (!j.contains("run")) continue;
    RunRecord& r = runs[j.at("run").get<std::string>()];
    r.label = j.at("run").get<std::string>();
    if (event == "run_start") {
      r.seed = j.value("seed", std::uint64_t{0});
    } else if (event == "step") {
      r.step_losses.push_back(number(j.at("loss")));
    } else if (event == "epoch") {
      EpochRecord e;
      e.epoch = j.at("epoch").get<std::size_t>();
      e.step = j.at("step").get<std::size_t>();
      e.train_loss = number(j.at("train_loss"));
      e.eval_accuracy = number(j.at("eval_accuracy"));
      e.threshold = number(j.at("sparsity").at("v"));
      e.sparsity = sparsity_from_json(j.at("sparsity"));
      e.combine_weights = numbers(j.at("combine_weights"));
      e.gamma = number(j.at("gamma"));
      r.epochs.push_back(std::move(e));
    } else if (event == "run_end") {
      r.test_accuracy = number(j.at("test_accuracy"));
      r.diverged = j.at("diverged").get<bool>();
      r.wall_seconds = number(j.at("wall_seconds"));
      r.final_gamma = number(j.at("final_gamma"));
      r.final_combine_weights = numbers(j.at("final_combine_weights"));
      r.final_sparsity = sparsity_from_json(j.at("final_sparsity"));
    }
  }
  return runs;
}

std::map<std::string, RunRecord> replay_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics stream " + path.string());
  return replay_metrics(in);
}

}  // namespace bermo
