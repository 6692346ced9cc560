#include "bermo/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "bermo/config.hpp"
#include "bermo/error.hpp"
#include "bermo/metrics.hpp"
#include "bermo/ops.hpp"

namespace bermo {

using nlohmann::json;

namespace {

bool finite_nonnegative(double x) { return std::isfinite(x) && x >= 0.0; }

// Linear warmup then linear decay to zero, evaluated before the optimizer
// step counter advances.
double lr_factor(std::size_t step, std::size_t warmup, std::size_t total) {
  if (step < warmup) return double(step) / double(std::max<std::size_t>(1, warmup));
  if (total <= warmup) return 0.0;
  return std::max(0.0, double(total - step) / double(total - warmup));
}

// Penalty weight grows with the threshold so soft-movement runs start
// unregularized; constant when the schedule is flat.
double regularization_lambda(const RunConfig& cfg, double threshold) {
  if (cfg.final_threshold == 0.0) return cfg.final_lambda;
  return cfg.final_lambda * threshold / cfg.final_threshold;
}

void clip_grad_norm(const ParameterList& params, double max_norm) {
  if (!(max_norm > 0.0)) return;
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const double factor = max_norm / (norm + 1e-6);
  for (auto p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double& g : p.tensor.mutable_grad()) g *= factor;
  }
}

MaskContext mask_context(const RunConfig& cfg, bool training, double threshold, Rng* rng) {
  MaskContext ctx;
  ctx.training = training;
  ctx.threshold = threshold;
  ctx.rng = rng;
  ctx.hard_concrete = cfg.model.hard_concrete;
  return ctx;
}

json epoch_json(const std::string& label, const EpochRecord& e) {
  return {{"event", "epoch"},
          {"run", label},
          {"epoch", e.epoch},
          {"step", e.step},
          {"train_loss", e.train_loss},
          {"eval_accuracy", e.eval_accuracy},
          {"gamma", e.gamma},
          {"combine_weights", e.combine_weights},
          {"sparsity", to_json(e.sparsity, e.step, e.threshold)}};
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  task.validate();
  if (task.num_classes != model.num_classes) {
    throw ConfigError("task has " + std::to_string(task.num_classes) + " classes but the model head has " +
                      std::to_string(model.num_classes));
  }
  if (task.seq_len > model.encoder.max_seq_len) {
    throw ConfigError("max_seq_length " + std::to_string(task.seq_len) + " exceeds the position table (" +
                      std::to_string(model.encoder.max_seq_len) + ")");
  }
  if (task.vocab_size > model.encoder.vocab_size) {
    throw ConfigError("task vocabulary exceeds the embedding table");
  }
  if (num_train_epochs == 0) throw ConfigError("num_train_epochs must be at least 1");
  if (per_gpu_train_batch_size == 0 || per_gpu_eval_batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (!finite_nonnegative(learning_rate) || !finite_nonnegative(mask_scores_learning_rate) ||
      !finite_nonnegative(effective_skip_connection_lr())) {
    throw ConfigError("learning rates must be finite and non-negative");
  }
  if (!finite_nonnegative(final_lambda)) throw ConfigError("final_lambda must be finite and non-negative");
  if (!finite_nonnegative(weight_decay)) throw ConfigError("weight_decay must be finite and non-negative");
  if (!finite_nonnegative(max_grad_norm)) throw ConfigError("max_grad_norm must be finite and non-negative");
  if (regularization != Regularization::kNone && !has_learned_scores(model.pruning)) {
    throw ConfigError("regularization " + std::string(to_string(regularization)) + " needs a pruning method with learned scores");
  }
  if (model.pruning != PruningMethod::kNone) make_schedule(*this).validate(model.pruning);
  if (uses_distillation()) distill.validate();
}

std::size_t steps_per_epoch(const RunConfig& cfg) {
  return (cfg.task.train_size + cfg.per_gpu_train_batch_size - 1) / cfg.per_gpu_train_batch_size;
}

std::size_t total_steps(const RunConfig& cfg) { return steps_per_epoch(cfg) * cfg.num_train_epochs; }

std::size_t effective_warmup_steps(const RunConfig& cfg) {
  return cfg.warmup_steps.value_or(total_steps(cfg) / 25);
}

SparsitySchedule make_schedule(const RunConfig& cfg) {
  SparsitySchedule s;
  s.initial_threshold = cfg.initial_threshold;
  s.final_threshold = cfg.final_threshold;
  s.warmup_steps = effective_warmup_steps(cfg);
  s.initial_warmup = cfg.initial_warmup;
  s.final_warmup = cfg.final_warmup;
  s.total_steps = total_steps(cfg);
  return s;
}

bool detect_divergence(const RunRecord& record, std::size_t num_classes) {
  for (double l : record.step_losses) {
    if (!std::isfinite(l)) return true;
  }
  for (const auto& e : record.epochs) {
    if (!std::isfinite(e.train_loss)) return true;
  }
  if (record.epochs.empty()) return false;
  // Reference is the first step's loss: the untrained model's value.
  const double reference = record.step_losses.empty() ? record.epochs.front().train_loss : record.step_losses.front();
  const EpochRecord& last = record.epochs.back();
  return last.eval_accuracy <= chance_accuracy(num_classes) + 0.02 && last.train_loss > reference;
}

double evaluate(const BermoModel& model, std::span<const Example> examples, const MaskContext& ctx,
                std::size_t batch_size) {
  if (examples.empty()) return 0.0;
  NoGradGuard no_grad;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const LabeledBatch b = make_batch(examples, idx);
    const Tensor logits = model.logits(b.inputs, ctx);
    const std::size_t classes = logits.size(1);
    const auto v = logits.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = v.subspan(i * classes, classes);
      const auto best = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
      correct += int(best) == b.labels[i] ? 1 : 0;
    }
  }
  return double(correct) / double(examples.size());
}

TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& options) {
  cfg.validate();
  const auto wall_start = std::chrono::steady_clock::now();

  std::optional<TeacherSnapshot> own_teacher;
  const TeacherSnapshot* teacher = options.teacher;
  if (cfg.uses_distillation() && teacher == nullptr) {
    own_teacher.emplace(cfg.teacher_name_or_path);
    teacher = &*own_teacher;
  }

  const Rng root(cfg.seed);
  TrainResult result{RunRecord{}, BermoModel(cfg.model, root.split("model").next_u64()), 1.0};
  BermoModel& model = result.model;
  RunRecord& record = result.record;
  record.label = options.label;
  record.seed = cfg.seed;

  Rng shuffle_rng = root.split("shuffle");
  Rng dropout_rng = root.split("dropout");
  Rng mask_rng = root.split("mask");

  ParameterList trainable;
  for (const auto& p : model.parameters()) {
    if (p.tensor.requires_grad()) trainable.push_back(p);
  }
  // Scores are clipped on their own so they never rescale weight updates.
  ParameterList score_params, model_params;
  for (const auto& p : trainable) (p.group == ParameterGroup::kScores ? score_params : model_params).push_back(p);
  Optimizer optimizer(trainable, cfg.optimizer, AdamSettings{0.9, 0.999, 1e-8, cfg.weight_decay});

  const bool pruned = cfg.model.pruning != PruningMethod::kNone;
  const SparsitySchedule schedule = make_schedule(cfg);
  const std::size_t total = total_steps(cfg);
  const std::size_t warmup = effective_warmup_steps(cfg);
  auto threshold_at = [&](std::size_t step) { return pruned ? schedule.at(step) : 1.0; };

  if (options.metrics) {
    options.metrics->write({{"event", "run_start"}, {"run", record.label}, {"seed", cfg.seed}, {"config", to_json(cfg)}});
  }

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  bool stopped = false;

  for (std::size_t epoch = 1; epoch <= cfg.num_train_epochs && !stopped; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.per_gpu_train_batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.per_gpu_train_batch_size);
      const LabeledBatch batch =
          make_batch(data.train, std::span<const std::size_t>(order).subspan(start, end - start));
      const double threshold = threshold_at(step);
      const MaskContext ctx = mask_context(cfg, true, threshold, &mask_rng);

      optimizer.zero_grad();
      const auto out = model.forward(batch.inputs, AttentionMask::full(batch.inputs.seq), ctx, true, &dropout_rng);
      Tensor loss = teacher ? kd_loss(out.logits, teacher->logits(batch.inputs), batch.labels, cfg.distill)
                            : cross_entropy(out.logits, batch.labels);
      if (cfg.regularization != Regularization::kNone) {
        const double lambda = regularization_lambda(cfg, threshold);
        if (lambda != 0.0) loss = add(loss, scale(model.regularization(cfg.regularization), lambda));
      }
      const double loss_value = loss.item();
      record.step_losses.push_back(loss_value);
      if (options.metrics && options.log_steps) {
        options.metrics->write(
            {{"event", "step"}, {"run", record.label}, {"step", step + 1}, {"loss", loss_value}, {"threshold", threshold}});
      }
      if (!std::isfinite(loss_value)) {
        stopped = true;
        break;
      }
      loss.backward();
      clip_grad_norm(score_params, cfg.max_grad_norm);
      clip_grad_norm(model_params, cfg.max_grad_norm);
      const double f = cfg.linear_lr_schedule ? lr_factor(step, warmup, total) : 1.0;
      optimizer.step(GroupRates{cfg.learning_rate * f, cfg.mask_scores_learning_rate * f,
                                cfg.effective_skip_connection_lr() * f});
      ++step;
      loss_sum += loss_value;
      ++loss_count;
      if (!optimizer.parameters_finite()) {
        record.step_losses.push_back(std::numeric_limits<double>::quiet_NaN());
        stopped = true;
        break;
      }
    }
    if (stopped) break;

    EpochRecord e;
    e.epoch = epoch;
    e.step = step;
    e.train_loss = loss_count ? loss_sum / double(loss_count) : 0.0;
    e.threshold = threshold_at(step);
    const MaskContext eval_ctx = mask_context(cfg, false, e.threshold, nullptr);
    e.eval_accuracy = evaluate(model, data.val, eval_ctx, cfg.per_gpu_eval_batch_size);
    e.sparsity = model.sparsity(eval_ctx);
    if (const CombineBlock* c = model.combine()) {
      e.combine_weights = c->layer_weights();
      e.gamma = c->gamma_value();
    }
    if (options.metrics) options.metrics->write(epoch_json(record.label, e));
    record.epochs.push_back(std::move(e));
  }

  result.eval_threshold = threshold_at(step);
  const MaskContext final_ctx = mask_context(cfg, false, result.eval_threshold, nullptr);
  record.test_accuracy = stopped ? std::numeric_limits<double>::quiet_NaN()
                                 : evaluate(model, data.test, final_ctx, cfg.per_gpu_eval_batch_size);
  record.final_sparsity = model.sparsity(final_ctx);
  if (const CombineBlock* c = model.combine()) {
    record.final_combine_weights = c->layer_weights();
    record.final_gamma = c->gamma_value();
  }
  record.diverged = stopped || detect_divergence(record, cfg.model.num_classes);
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  if (options.metrics) {
    options.metrics->write({{"event", "run_end"},
                            {"run", record.label},
                            {"test_accuracy", record.test_accuracy},
                            {"diverged", record.diverged},
                            {"wall_seconds", record.wall_seconds},
                            {"final_gamma", record.final_gamma},
                            {"final_combine_weights", record.final_combine_weights},
                            {"final_sparsity", to_json(record.final_sparsity, step, result.eval_threshold)}});
  }
  return result;
}

}  // namespace bermo
