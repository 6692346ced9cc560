#include "bermo/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "bermo/error.hpp"

namespace bermo {

using nlohmann::json;

namespace {

std::string percent(double accuracy) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << 100.0 * accuracy;
  return s.str();
}

std::string optional_percent(const std::optional<double>& x) { return x ? percent(*x) : std::string(); }

std::string cell(const RunRecord& r) { return r.diverged ? "Diverges" : percent(r.test_accuracy); }

std::string run_label(const RunConfig& cfg, bool combine) {
  return cfg.model_name + "/" + (combine ? "bermo" : "bert") + "/seed=" + std::to_string(cfg.seed);
}

double number(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

ColumnSummary summarize(std::span<const RunRecord> column) {
  ColumnSummary s;
  s.runs = column.size();
  std::vector<double> ok;
  for (const auto& r : column) {
    if (r.diverged) {
      ++s.diverged;
    } else {
      ok.push_back(r.test_accuracy);
    }
  }
  if (ok.empty()) return s;
  double sum = 0.0;
  for (double x : ok) sum += x;
  const double mean = sum / double(ok.size());
  s.mean = mean;
  if (ok.size() >= 2) {
    double sq = 0.0;
    for (double x : ok) sq += (x - mean) * (x - mean);
    s.std = std::sqrt(sq / double(ok.size() - 1));
  }
  return s;
}

StabilityReport seed_sweep(const RunConfig& cfg, const Dataset& data, std::span<const std::uint64_t> seeds,
                           const SweepOptions& options) {
  if (seeds.size() < 2) throw ConfigError("seed sweep needs at least two seeds");
  StabilityReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  report.without_combine.resize(seeds.size());
  report.with_combine.resize(seeds.size());
  parallel_for(2 * seeds.size(), options.jobs, [&](std::size_t job) {
    const bool combine = job % 2 == 1;
    RunConfig run = cfg;
    run.seed = seeds[job / 2];
    run.model.use_combine = combine;
    TrainOptions opts{run_label(run, combine), options.metrics, options.teacher, options.log_steps};
    RunRecord record = train(run, data, opts).record;
    (combine ? report.with_combine : report.without_combine)[job / 2] = std::move(record);
  });
  return report;
}

void write_stability_csv(const StabilityReport& report, std::ostream& out) {
  out << "seed,BERT,BERMo\n";
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    out << report.seeds[i] << ',' << cell(report.without_combine[i]) << ',' << cell(report.with_combine[i]) << '\n';
  }
  const ColumnSummary off = summarize(report.without_combine);
  const ColumnSummary on = summarize(report.with_combine);
  out << "mean," << optional_percent(off.mean) << ',' << optional_percent(on.mean) << '\n';
  out << "std," << optional_percent(off.std) << ',' << optional_percent(on.std) << '\n';
}

const ConvergencePoint& ConvergenceCurve::at(std::size_t epochs, bool combine) const {
  for (const auto& p : points) {
    if (p.epochs == epochs && p.combine == combine) return p;
  }
  throw std::out_of_range("no convergence point for " + std::to_string(epochs) + " epochs");
}

ConvergenceCurve convergence_study(const RunConfig& cfg, const Dataset& data, std::span<const std::size_t> epoch_grid,
                                   const SweepOptions& options) {
  if (epoch_grid.empty()) throw ConfigError("epoch grid is empty");
  for (std::size_t e : epoch_grid) {
    if (e == 0) throw ConfigError("epoch budgets must be at least 1");
  }
  ConvergenceCurve curve;
  curve.epoch_grid.assign(epoch_grid.begin(), epoch_grid.end());
  curve.points.resize(2 * epoch_grid.size());
  parallel_for(curve.points.size(), options.jobs, [&](std::size_t job) {
    const bool combine = job % 2 == 1;
    RunConfig run = cfg;
    run.num_train_epochs = epoch_grid[job / 2];
    run.model.use_combine = combine;
    // The ramp scales with the budget unless warmup is pinned explicitly.
    const std::string label =
        cfg.model_name + "/" + (combine ? "bermo" : "bert") + "/epochs=" + std::to_string(run.num_train_epochs);
    TrainOptions opts{label, options.metrics, options.teacher, options.log_steps};
    const RunRecord r = train(run, data, opts).record;
    ConvergencePoint& p = curve.points[job];
    p.epochs = run.num_train_epochs;
    p.combine = combine;
    p.diverged = r.diverged;
    p.metric = r.diverged ? std::numeric_limits<double>::quiet_NaN() : r.test_accuracy;
    p.retained_fraction = r.final_sparsity.global_retained_fraction;
  });
  return curve;
}

void write_convergence_csv(const ConvergenceCurve& curve, std::ostream& out) {
  out << "epochs,BERT,BERMo\n";
  for (std::size_t e : curve.epoch_grid) {
    const auto& off = curve.at(e, false);
    const auto& on = curve.at(e, true);
    out << e << ',' << (off.diverged ? "Diverges" : percent(off.metric)) << ','
        << (on.diverged ? "Diverges" : percent(on.metric)) << '\n';
  }
}

void write_convergence_svg(const ConvergenceCurve& curve, std::ostream& out) {
  const double width = 480, height = 320, margin = 48;
  double lo = 1.0, hi = 0.0;
  for (const auto& p : curve.points) {
    if (std::isfinite(p.metric)) {
      lo = std::min(lo, p.metric);
      hi = std::max(hi, p.metric);
    }
  }
  if (lo > hi) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-3) lo -= 0.01, hi += 0.01;
  const double emin = double(*std::min_element(curve.epoch_grid.begin(), curve.epoch_grid.end()));
  const double emax = double(*std::max_element(curve.epoch_grid.begin(), curve.epoch_grid.end()));
  auto x = [&](double e) { return margin + (emax > emin ? (e - emin) / (emax - emin) : 0.5) * (width - 2 * margin); };
  auto y = [&](double m) { return height - margin - (m - lo) / (hi - lo) * (height - 2 * margin); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">epochs</text>\n";
  out << "<text x=\"14\" y=\"" << height / 2 << "\" transform=\"rotate(-90 14 " << height / 2
      << ")\" text-anchor=\"middle\">test accuracy</text>\n";
  for (const bool combine : {false, true}) {
    const char* color = combine ? "#d62728" : "#1f77b4";
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t e : curve.epoch_grid) {
      const auto& p = curve.at(e, combine);
      if (std::isfinite(p.metric)) out << x(double(e)) << ',' << y(p.metric) << ' ';
    }
    out << "\"/>\n";
    out << "<text x=\"" << width - margin << "\" y=\"" << (combine ? 20 : 36) << "\" fill=\"" << color
        << "\" text-anchor=\"end\">" << (combine ? "BERMo" : "BERT") << "</text>\n";
  }
  out << "</svg>\n";
}

json to_json(const ConvergenceCurve& curve) {
  json points = json::array();
  for (const auto& p : curve.points) {
    points.push_back({{"epochs", p.epochs},
                      {"combine", p.combine},
                      {"metric", p.metric},
                      {"diverged", p.diverged},
                      {"retained_fraction", p.retained_fraction}});
  }
  return {{"format", "bermo-convergence"}, {"version", 1}, {"epoch_grid", curve.epoch_grid}, {"points", points}};
}

ConvergenceCurve convergence_from_json(const json& j) {
  try {
    if (j.at("format") != "bermo-convergence" || j.at("version") != 1) throw ConfigError("not a convergence file");
    ConvergenceCurve c;
    c.epoch_grid = j.at("epoch_grid").get<std::vector<std::size_t>>();
    for (const auto& p : j.at("points")) {
      c.points.push_back({p.at("epochs").get<std::size_t>(), p.at("combine").get<bool>(), number(p.at("metric")),
                          p.at("diverged").get<bool>(), number(p.at("retained_fraction"))});
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed convergence file: ") + e.what());
  }
}

void save_convergence(const ConvergenceCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(curve).dump(2) << '\n';
}

ConvergenceCurve load_convergence(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return convergence_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw IoError("corrupt convergence file " + path.string() + ": " + e.what());
  }
}

}  // namespace bermo
