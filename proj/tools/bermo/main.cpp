// bermo: fine-pruning lab command line.
//
//   bermo train        one fine-pruning run
//   bermo distill      fine-pruning with a frozen teacher
//   bermo sweep        seed sweep with the combine block off and on
//   bermo convergence  epoch-budget study
//   bermo gradcheck    finite-difference gradient checks
//   bermo report       summarize a metrics stream
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bermo/checkpoint.hpp"
#include "bermo/config.hpp"
#include "bermo/error.hpp"
#include "bermo/gradcheck.hpp"
#include "bermo/metrics.hpp"
#include "bermo/sweep.hpp"
#include "bermo/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string kebab(std::string s) {
  for (char& c : s) c = c == '_' ? '-' : c;
  return s;
}

// Config file plus one flag per hyperparameter, in snake and kebab case.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string output_dir;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--output-dir,--output_dir", output_dir, "Output root (default: $BERMO_OUTPUT_DIR or ./bermo_runs)");
    for (const auto& key : bermo::override_keys()) {
      std::string names = "--" + key;
      if (kebab(key) != key) names += ",--" + kebab(key);
      options[key] = app.add_option(names, values[key], "Override " + key)->group("Hyperparameters");
    }
  }

  json document() const {
    json doc;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw UsageError("config file not found: " + config_path);
      std::ifstream in(config_path);
      try {
        doc = bermo::to_json(bermo::run_config_from_json(json::parse(in)));
      } catch (const json::parse_error& e) {
        throw UsageError("config file " + config_path + " is not valid JSON: " + e.what());
      }
    } else {
      doc = bermo::to_json(bermo::RunConfig{});
    }
    for (const auto& key : bermo::override_keys()) {
      if (options.at(key)->count() > 0) bermo::apply_override(doc, key, values.at(key));
    }
    return doc;
  }

  bermo::RunConfig resolve() const {
    bermo::RunConfig cfg = bermo::run_config_from_json(document());
    cfg.validate();
    return cfg;
  }

  fs::path run_dir(const bermo::RunConfig& cfg) const {
    fs::path root = output_dir;
    if (root.empty()) {
      const char* env = std::getenv("BERMO_OUTPUT_DIR");
      root = env && *env ? fs::path(env) : fs::path("bermo_runs");
    }
    const fs::path dir = root / cfg.model_name;
    fs::create_directories(dir);
    return dir;
  }
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw bermo::IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void print_run(const bermo::RunRecord& r) {
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& e : r.epochs) {
    std::cout << "epoch " << e.epoch << "  step " << e.step << "  loss " << e.train_loss << "  eval_acc "
              << e.eval_accuracy << "  v " << e.threshold << "  retained " << e.sparsity.global_retained_fraction
              << '\n';
  }
  std::cout << "test_acc " << r.test_accuracy << "  retained " << r.final_sparsity.global_retained_fraction << " ("
            << r.final_sparsity.retained_weights << "/" << r.final_sparsity.prunable_weights << ")  diverged "
            << (r.diverged ? "yes" : "no") << "  wall " << std::setprecision(1) << r.wall_seconds << "s\n";
}

int run_training(const ConfigFlags& flags, bool strict, const bermo::TeacherSnapshot* teacher) {
  const bermo::RunConfig cfg = flags.resolve();
  const fs::path dir = flags.run_dir(cfg);
  bermo::save_run_config(cfg, dir / "config.json");
  const bermo::Dataset data = bermo::generate_task(cfg.task);
  bermo::MetricsWriter metrics(dir / "metrics.ndjson");
  bermo::TrainOptions options{cfg.model_name, &metrics, teacher, true};
  const bermo::TrainResult result = bermo::train(cfg, data, options);
  write_json(dir / "record.json", bermo::to_json(result.record));
  bermo::save_checkpoint(result.model, result.eval_threshold, dir / "checkpoint.json");
  print_run(result.record);
  std::cout << "outputs in " << dir.string() << '\n';
  return strict && result.record.diverged ? kExitFailure : kExitOk;
}

int cmd_distill(const ConfigFlags& flags, bool strict) {
  bermo::RunConfig cfg = flags.resolve();
  if (!cfg.uses_distillation()) throw UsageError("distill needs --teacher_name_or_path (a checkpoint from `bermo train`)");
  if (!fs::exists(cfg.teacher_name_or_path)) throw UsageError("teacher checkpoint not found: " + cfg.teacher_name_or_path);
  const bermo::TeacherSnapshot teacher(cfg.teacher_name_or_path);
  return run_training(flags, strict, &teacher);
}

int cmd_sweep(const ConfigFlags& flags, std::vector<std::uint64_t> seeds, std::size_t jobs) {
  const bermo::RunConfig cfg = flags.resolve();
  const fs::path dir = flags.run_dir(cfg);
  bermo::save_run_config(cfg, dir / "config.json");
  const bermo::Dataset data = bermo::generate_task(cfg.task);
  bermo::MetricsWriter metrics(dir / "metrics.ndjson");
  const auto report = bermo::seed_sweep(cfg, data, seeds, {jobs, &metrics, nullptr, false});
  std::ofstream csv(dir / "stability.csv");
  bermo::write_stability_csv(report, csv);
  bermo::write_stability_csv(report, std::cout);
  std::cout << "outputs in " << dir.string() << '\n';
  return kExitOk;
}

int cmd_convergence(const ConfigFlags& flags, std::vector<std::size_t> grid, std::size_t jobs) {
  const bermo::RunConfig cfg = flags.resolve();
  const fs::path dir = flags.run_dir(cfg);
  bermo::save_run_config(cfg, dir / "config.json");
  const bermo::Dataset data = bermo::generate_task(cfg.task);
  bermo::MetricsWriter metrics(dir / "metrics.ndjson");
  const auto curve = bermo::convergence_study(cfg, data, grid, {jobs, &metrics, nullptr, false});
  bermo::save_convergence(curve, dir / "convergence.json");
  std::ofstream csv(dir / "convergence.csv");
  bermo::write_convergence_csv(curve, csv);
  std::ofstream svg(dir / "convergence.svg");
  bermo::write_convergence_svg(curve, svg);
  bermo::write_convergence_csv(curve, std::cout);
  std::cout << "outputs in " << dir.string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const std::string& module) {
  const auto results = bermo::run_gradchecks(module);
  std::size_t failed = 0;
  double worst = 0.0;
  for (const auto& r : results) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(10) << r.module << std::setw(32) << r.name
              << std::scientific << std::setprecision(3) << r.max_relative_error << '\n';
    failed += r.passed() ? 0 : 1;
    worst = std::max(worst, r.max_relative_error);
  }
  std::cout << results.size() - failed << "/" << results.size() << " checks passed, max relative error "
            << std::scientific << std::setprecision(3) << worst << " (tolerance " << bermo::kGradcheckTolerance << ")\n";
  return failed ? kExitFailure : kExitOk;
}

int cmd_report(const std::string& metrics_path, const std::string& out_path) {
  if (!fs::exists(metrics_path)) throw UsageError("metrics file not found: " + metrics_path);
  const auto runs = bermo::replay_metrics(fs::path(metrics_path));
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw bermo::IoError("cannot write " + out_path);
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  out << "run,seed,epochs,steps,final_train_loss,final_eval_accuracy,test_accuracy,retained_fraction,diverged\n";
  out << std::setprecision(6);
  for (const auto& [label, r] : runs) {
    const bool has_epoch = !r.epochs.empty();
    out << label << ',' << r.seed << ',' << r.epochs.size() << ',' << r.step_losses.size() << ','
        << (has_epoch ? r.epochs.back().train_loss : NAN) << ',' << (has_epoch ? r.epochs.back().eval_accuracy : NAN)
        << ',' << r.test_accuracy << ',' << r.final_sparsity.global_retained_fraction << ','
        << (r.diverged ? "true" : "false") << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bermo: fine-pruning lab for scalar-mix encoders"};
  app.require_subcommand(1);

  bool strict = false;
  ConfigFlags train_flags, distill_flags, sweep_flags, conv_flags;

  auto* train = app.add_subcommand("train", "Fine-prune one model");
  train_flags.attach(*train);
  train->add_flag("--strict", strict, "Exit 1 when the run diverges");

  auto* distill = app.add_subcommand("distill", "Fine-prune with a frozen teacher checkpoint");
  distill_flags.attach(*distill);
  distill->add_flag("--strict", strict, "Exit 1 when the run diverges");

  std::vector<std::uint64_t> seeds = bermo::kStabilitySeeds;
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Seed sweep, combine block off and on");
  sweep_flags.attach(*sweep);
  sweep->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  sweep->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  std::vector<std::size_t> grid = {2, 4, 6, 8};
  auto* conv = app.add_subcommand("convergence", "Epoch-budget study, combine block off and on");
  conv_flags.attach(*conv);
  conv->add_option("--epochs-grid,--epochs_grid", grid, "Comma-separated epoch budgets")->delimiter(',');
  conv->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  std::string module = "all";
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--module", module, "all|tensor|combine|pruning|encoder|distill");

  std::string metrics_path, report_out;
  auto* report = app.add_subcommand("report", "Summarize a metrics stream as CSV");
  report->add_option("--metrics", metrics_path, "metrics.ndjson to replay")->required();
  report->add_option("--out", report_out, "CSV destination (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return run_training(train_flags, strict, nullptr);
    if (*distill) return cmd_distill(distill_flags, strict);
    if (*sweep) return cmd_sweep(sweep_flags, seeds, jobs);
    if (*conv) return cmd_convergence(conv_flags, grid, jobs);
    if (*gradcheck) return cmd_gradcheck(module);
    if (*report) return cmd_report(metrics_path, report_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bermo::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
