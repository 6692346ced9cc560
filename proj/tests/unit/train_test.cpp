#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bermo/error.hpp"
#include "bermo/train.hpp"

namespace bermo {
namespace {

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.model.encoder.num_layers = 2;
  cfg.model.encoder.hidden_dim = 16;
  cfg.model.encoder.num_heads = 2;
  cfg.model.encoder.ffn_dim = 32;
  cfg.model.encoder.max_seq_len = 8;
  cfg.task.seq_len = 8;
  cfg.task.train_size = 256;
  cfg.task.val_size = 64;
  cfg.task.test_size = 64;
  cfg.num_train_epochs = 2;
  cfg.seed = 3;
  return cfg;
}

TEST(Schedule, StepCountsAndDefaultWarmup) {
  RunConfig cfg = tiny_run();
  cfg.task.train_size = 250;
  EXPECT_EQ(steps_per_epoch(cfg), 8u);
  EXPECT_EQ(total_steps(cfg), 16u);
  cfg.num_train_epochs = 25;
  EXPECT_EQ(effective_warmup_steps(cfg), 8u);
  cfg.warmup_steps = 3;
  EXPECT_EQ(effective_warmup_steps(cfg), 3u);
  EXPECT_EQ(make_schedule(cfg).total_steps, 200u);
}

TEST(RunConfig, ValidationRejectsInconsistentSettings) {
  RunConfig cfg = tiny_run();
  EXPECT_NO_THROW(cfg.validate());
  cfg.model.num_classes = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_run();
  cfg.model.pruning = PruningMethod::kMagnitude;
  cfg.regularization = Regularization::kL1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_run();
  cfg.learning_rate = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_run();
  cfg.task.seq_len = 40;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_run();
  cfg.num_train_epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Sparsity, GlobalTopVRetainsRoundedFraction) {
  for (const double v : {0.10, 0.33, 0.5, 0.97}) {
    ModelConfig mc = tiny_run().model;
    mc.pruning = PruningMethod::kTopK;
    BermoModel model(mc, 5);
    Rng rng(6);
    for (auto* layer : model.encoder().prunable()) {
      for (double& s : layer->scores().mutable_data()) s = rng.uniform(-1, 1);
    }
    MaskContext ctx;
    ctx.threshold = v;
    const auto report = model.sparsity(ctx);
    EXPECT_EQ(report.retained_weights, std::size_t(std::llround(v * double(report.prunable_weights))));
    EXPECT_DOUBLE_EQ(report.global_retained_fraction,
                     double(report.retained_weights) / double(report.prunable_weights));
    EXPECT_EQ(report.retained_fraction_per_layer.size(), 2u);
  }
}

TEST(Train, SameSeedIsBitwiseDeterministic) {
  RunConfig cfg = tiny_run();
  cfg.model.pruning = PruningMethod::kTopK;
  const Dataset data = generate_task(cfg.task);
  const auto a = train(cfg, data).record;
  const auto b = train(cfg, data).record;
  ASSERT_EQ(a.step_losses.size(), 16u);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.test_accuracy, b.test_accuracy);
  EXPECT_EQ(a.final_combine_weights, b.final_combine_weights);
  cfg.seed = 4;
  EXPECT_NE(train(cfg, data).record.step_losses, a.step_losses);
}

TEST(Train, LearnsMajorityTaskAboveChance) {
  RunConfig cfg = tiny_run();
  cfg.task.train_size = 1024;
  cfg.num_train_epochs = 3;
  const auto r = train(cfg, generate_task(cfg.task)).record;
  EXPECT_FALSE(r.diverged);
  EXPECT_GT(r.test_accuracy, 0.75);
  EXPECT_LT(r.epochs.back().train_loss, r.step_losses.front());
}

TEST(Train, EmptyRampReproducesDenseDynamicsBitwise) {
  RunConfig dense = tiny_run();
  dense.num_train_epochs = 1;
  dense.task.train_size = 320;  // 10 steps
  const Dataset data = generate_task(dense.task);
  const auto reference = train(dense, data).record;
  ASSERT_EQ(reference.step_losses.size(), 10u);
  for (const auto method : {PruningMethod::kMagnitude, PruningMethod::kTopK, PruningMethod::kSigmoidThreshold}) {
    RunConfig pruned = dense;
    pruned.model.pruning = method;
    const double keep_all = method == PruningMethod::kSigmoidThreshold ? 0.0 : 1.0;
    pruned.initial_threshold = keep_all;
    pruned.final_threshold = keep_all;
    const auto r = train(pruned, data).record;
    EXPECT_EQ(r.step_losses, reference.step_losses) << to_string(method);
    EXPECT_EQ(r.test_accuracy, reference.test_accuracy) << to_string(method);
  }
}

TEST(Train, OverflowingParametersStopTheRunAsDiverged) {
  RunConfig cfg = tiny_run();
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.max_grad_norm = 0.0;
  cfg.learning_rate = 1e300;
  const auto r = train(cfg, generate_task(cfg.task)).record;
  EXPECT_TRUE(r.diverged);
  EXPECT_LT(r.step_losses.size(), 16u);
  EXPECT_FALSE(r.step_losses.empty());
  EXPECT_TRUE(std::isnan(r.test_accuracy));
}

TEST(Train, HostileLearningRateIsFlaggedAsDivergence) {
  RunConfig cfg = tiny_run();
  cfg.learning_rate = 10.0;
  cfg.model.use_combine = false;
  const auto r = train(cfg, generate_task(cfg.task)).record;
  EXPECT_TRUE(r.diverged);
}

RunRecord record_with(std::vector<double> steps, double last_loss, double last_acc) {
  RunRecord r;
  r.step_losses = std::move(steps);
  EpochRecord e;
  e.train_loss = last_loss;
  e.eval_accuracy = last_acc;
  r.epochs.push_back(e);
  return r;
}

TEST(Divergence, DetectorCases) {
  EXPECT_FALSE(detect_divergence(record_with({0.7, 0.6}, 0.5, 0.9), 2));
  EXPECT_FALSE(detect_divergence(record_with({0.7, 0.6}, 0.8, 0.9), 2));   // high loss, good accuracy
  EXPECT_FALSE(detect_divergence(record_with({0.7, 0.6}, 0.65, 0.5), 2));  // at chance, loss still below start
  EXPECT_TRUE(detect_divergence(record_with({0.7, 0.6}, 0.8, 0.52), 2));
  EXPECT_FALSE(detect_divergence(record_with({0.7, 0.6}, 0.8, 0.53), 2));
  EXPECT_TRUE(detect_divergence(record_with({0.7, std::nan("")}, 0.1, 0.9), 2));
  EXPECT_TRUE(detect_divergence(record_with({0.7}, std::numeric_limits<double>::infinity(), 0.9), 2));
  EXPECT_TRUE(detect_divergence(record_with({1.1}, 1.2, 0.34), 3));
  EXPECT_FALSE(detect_divergence(RunRecord{}, 2));
}

}  // namespace
}  // namespace bermo
