#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bermo/distill.hpp"
#include "bermo/model.hpp"
#include "bermo/optim.hpp"
#include "bermo/pruning.hpp"
#include "bermo/task.hpp"

namespace bermo {

class MetricsWriter;

/// Everything a fine-pruning run needs. Field names match the config-file
/// keys where one exists.
struct RunConfig {
  ModelConfig model{};
  SyntheticTask task{};

  double learning_rate = 1e-3;
  double mask_scores_learning_rate = 1e-2;
  /// Learning rate of the combine-block scalars; defaults to
  /// mask_scores_learning_rate when unset.
  std::optional<double> skip_connection_lr;
  std::size_t num_train_epochs = 3;
  std::size_t per_gpu_train_batch_size = 32;
  std::size_t per_gpu_eval_batch_size = 64;

  /// Absolute warmup steps; unset scales with run length (total_steps / 25,
  /// the ratio of a 25-epoch run whose warmup is one epoch).
  std::optional<std::size_t> warmup_steps;
  double initial_threshold = 1.0;
  double final_threshold = 0.10;
  double initial_warmup = 1.0;
  double final_warmup = 1.0;

  Regularization regularization = Regularization::kNone;
  double final_lambda = 0.0;

  /// Distillation engages when teacher_name_or_path is non-empty.
  DistillConfig distill{};
  std::string teacher_type = "bert";
  std::string teacher_name_or_path;

  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double weight_decay = 0.0;
  double max_grad_norm = 1.0;  // 0 disables clipping
  bool linear_lr_schedule = true;

  std::uint64_t seed = 42;
  std::string model_name = "run";

  bool uses_distillation() const { return !teacher_name_or_path.empty(); }
  double effective_skip_connection_lr() const { return skip_connection_lr.value_or(mask_scores_learning_rate); }
  void validate() const;
};

std::size_t steps_per_epoch(const RunConfig& cfg);
std::size_t total_steps(const RunConfig& cfg);
std::size_t effective_warmup_steps(const RunConfig& cfg);
SparsitySchedule make_schedule(const RunConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed
  double train_loss = 0.0;  // mean over the epoch's steps
  double eval_accuracy = 0.0;
  double threshold = 1.0;
  SparsityReport sparsity;
  std::vector<double> combine_weights;  // softmax(alpha); empty without combine
  double gamma = 1.0;
};

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  double test_accuracy = 0.0;
  bool diverged = false;
  double wall_seconds = 0.0;
  SparsityReport final_sparsity;
  std::vector<double> final_combine_weights;
  double final_gamma = 1.0;
};

/// Chance accuracy for `num_classes` balanced classes.
inline double chance_accuracy(std::size_t num_classes) { return 1.0 / double(num_classes); }

/// Fires on a non-finite training loss, or when the last evaluation is at most
/// chance + 2 points while the last epoch's mean training loss exceeds the
/// loss at the first step of epoch 1.
bool detect_divergence(const RunRecord& record, std::size_t num_classes);

/// Result of a training run plus the trained model.
struct TrainResult {
  RunRecord record;
  BermoModel model;
  double eval_threshold = 1.0;
};

struct TrainOptions {
  std::string label = "run";
  MetricsWriter* metrics = nullptr;
  const TeacherSnapshot* teacher = nullptr;
  bool log_steps = true;
};

/// Fine-prunes a fresh model on `data`. Stops early (diverged = true) on a
/// non-finite loss or parameter.
TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& options = {});

/// Accuracy over `examples` in evaluation mode.
double evaluate(const BermoModel& model, std::span<const Example> examples, const MaskContext& ctx,
                std::size_t batch_size);

}  // namespace bermo
