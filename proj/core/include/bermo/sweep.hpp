#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <vector>

#include "bermo/train.hpp"

namespace bermo {

/// The ten fine-tuning seeds of the stability study.
inline const std::vector<std::uint64_t> kStabilitySeeds = {9, 25, 39, 52, 59, 63, 77, 87, 91, 96};

struct SweepOptions {
  std::size_t jobs = 1;
  MetricsWriter* metrics = nullptr;
  const TeacherSnapshot* teacher = nullptr;
  bool log_steps = false;
};

/// Runs `count` independent jobs on up to `jobs` threads. Exceptions are
/// rethrown after every worker stops.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body);

struct ColumnSummary {
  std::size_t runs = 0;
  std::size_t diverged = 0;
  std::optional<double> mean;  // over non-diverged runs; absent when none
  std::optional<double> std;   // sample standard deviation; needs two runs
};

ColumnSummary summarize(std::span<const RunRecord> column);

/// Seeds x {combine off, combine on}.
struct StabilityReport {
  std::vector<std::uint64_t> seeds;
  std::vector<RunRecord> without_combine;
  std::vector<RunRecord> with_combine;
};

/// Trains `cfg` once per seed with the combine block off and on.
StabilityReport seed_sweep(const RunConfig& cfg, const Dataset& data, std::span<const std::uint64_t> seeds,
                           const SweepOptions& options = {});

/// CSV header "seed,BERT,BERMo"; one row per seed with test accuracy in
/// percent or "Diverges", then "mean" and "std" rows (empty when absent).
void write_stability_csv(const StabilityReport& report, std::ostream& out);

struct ConvergencePoint {
  std::size_t epochs = 0;
  bool combine = false;
  double metric = 0.0;  // test accuracy; NaN when the run diverged
  bool diverged = false;
  double retained_fraction = 1.0;
};

struct ConvergenceCurve {
  std::vector<std::size_t> epoch_grid;
  std::vector<ConvergencePoint> points;  // grid order, combine off then on

  const ConvergencePoint& at(std::size_t epochs, bool combine) const;
};

/// For each budget E, fine-prunes to the final threshold with the ramp
/// spanning E epochs, combine off and on.
ConvergenceCurve convergence_study(const RunConfig& cfg, const Dataset& data, std::span<const std::size_t> epoch_grid,
                                   const SweepOptions& options = {});

/// CSV header "epochs,BERT,BERMo" with test accuracy in percent.
void write_convergence_csv(const ConvergenceCurve& curve, std::ostream& out);
/// Line plot of both curves.
void write_convergence_svg(const ConvergenceCurve& curve, std::ostream& out);

nlohmann::json to_json(const ConvergenceCurve& curve);
ConvergenceCurve convergence_from_json(const nlohmann::json& j);
void save_convergence(const ConvergenceCurve& curve, const std::filesystem::path& path);
ConvergenceCurve load_convergence(const std::filesystem::path& path);

}  // namespace bermo
