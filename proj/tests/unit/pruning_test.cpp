#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bermo/error.hpp"
#include "bermo/ops.hpp"
#include "bermo/optim.hpp"
#include "bermo/pruning.hpp"

namespace bermo {
namespace {

// Independent Top_v: stable sort by descending score, keep the first k.
std::vector<double> sort_oracle(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> mask(scores.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1.0;
  return mask;
}

TEST(TopV, ExhaustiveAgainstSortOracleWithTies) {
  Rng rng(11);
  std::size_t mismatches = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s(n);
      // Few distinct values force ties.
      for (double& x : s) x = double(rng.below(trial % 2 ? 3 : 1000)) - 1.0;
      for (std::size_t k = 1; k <= n; ++k) {
        const double v = double(k) / double(n);
        ASSERT_EQ(topv_count(n, v), k);
        if (topv_mask(s, v) != sort_oracle(s, k)) ++mismatches;
      }
    }
  }
  EXPECT_EQ(mismatches, 0u);
}

TEST(TopV, DocumentedExamples) {
  EXPECT_EQ(topv_mask(std::vector<double>{5, 5, 1}, 2.0 / 3.0), (std::vector<double>{1, 1, 0}));
  EXPECT_EQ(topv_mask(std::vector<double>{0.3, 0.1, 0.2}, 1.0), (std::vector<double>{1, 1, 1}));
  std::vector<double> hundred(100);
  std::iota(hundred.begin(), hundred.end(), 0.0);
  const auto m = topv_mask(hundred, 0.10);
  EXPECT_EQ(std::accumulate(m.begin(), m.end(), 0.0), 10.0);
  EXPECT_EQ(m[99], 1.0);
  EXPECT_EQ(m[89], 0.0);
}

TEST(TopV, IdempotentAndValidated) {
  const std::vector<double> s = {0.5, -1.0, 2.0, 2.0, 0.0};
  EXPECT_EQ(topv_mask(s, 0.4), topv_mask(s, 0.4));
  EXPECT_THROW(topv_mask(s, 0.0), std::invalid_argument);
  EXPECT_THROW(topv_mask(s, 1.5), std::invalid_argument);
}

TEST(Magnitude, ScoresAreAbsoluteWeights) {
  const Tensor w = Tensor({2, 2}, {4, 1, 3, 2});
  EXPECT_EQ(topv_mask(magnitude_scores(w), 0.5).data()[0], 1.0);
  const auto mask = topv_mask(magnitude_scores(w), 0.5);
  EXPECT_EQ(std::vector<double>(mask.data().begin(), mask.data().end()), (std::vector<double>{1, 0, 1, 0}));
  const Tensor s = magnitude_scores(Tensor({2}, {-3, 2}));
  EXPECT_EQ(s[0], 3.0);
  EXPECT_EQ(s[1], 2.0);
  const Tensor flipped = magnitude_scores(Tensor({2}, {3, -2}));
  EXPECT_EQ(flipped[0], s[0]);
  EXPECT_EQ(flipped[1], s[1]);
  EXPECT_FALSE(magnitude_scores(Tensor({1}, {1.0}, true)).requires_grad());
}

TEST(Magnitude, LayerMaskMatchesAbsOracle) {
  Rng rng(12);
  MaskedLinear layer(6, 5, PruningMethod::kMagnitude, 0.0, 1.0, rng);
  MaskContext ctx;
  ctx.threshold = 0.3;
  std::vector<double> abs_w;
  for (double w : layer.weight().data()) abs_w.push_back(std::abs(w));
  const Tensor m = layer.mask(ctx);
  EXPECT_EQ(std::vector<double>(m.data().begin(), m.data().end()), sort_oracle(abs_w, 9));
}

TEST(MaskedLinear, FullRetentionEqualsDenseAndZeroMaskLeavesBias) {
  Rng rng(13);
  MaskedLinear layer(4, 3, PruningMethod::kTopK, 0.0, 1.0, rng);
  for (double& b : layer.bias().mutable_data()) b = rng.uniform(-1, 1);
  std::vector<double> xv(8);
  for (double& v : xv) v = rng.uniform(-1, 1);
  const Tensor x = Tensor({2, 4}, xv);
  MaskContext ctx;
  ctx.threshold = 1.0;
  const Tensor masked = masked_forward(layer, x, ctx);
  const Tensor dense = linear(x, layer.weight(), layer.bias());
  for (std::size_t i = 0; i < masked.numel(); ++i) EXPECT_EQ(masked[i], dense[i]);
  const Tensor zero = layer.forward(x, Tensor::zeros({3, 4}));
  for (std::size_t i = 0; i < zero.numel(); ++i) EXPECT_EQ(zero[i], layer.bias()[i % 3]);
  EXPECT_EQ(layer.scores().shape(), layer.weight().shape());
}

TEST(Movement, SingleStepHandExample) {
  Rng rng(14);
  MaskedLinear layer(1, 1, PruningMethod::kTopK, 0.0, 1.0, rng);
  layer.weight().mutable_data()[0] = 2.0;
  Optimizer sgd({{"s", layer.scores(), ParameterGroup::kScores}}, OptimizerKind::kSgd);
  MaskContext ctx;
  // dL/dW = 3 via a linear read-out of the single output.
  sum(scale(masked_forward(layer, Tensor({1, 1}, {1.0}), ctx), 3.0)).backward();
  sgd.step({0.0, 1.0, 0.0});
  EXPECT_EQ(layer.scores()[0], -6.0);
  sgd.zero_grad();
  sum(scale(masked_forward(layer, Tensor({1, 1}, {1.0}), ctx), 0.0)).backward();
  sgd.step({0.0, 1.0, 0.0});
  EXPECT_EQ(layer.scores()[0], -6.0);
}

TEST(Movement, GraphScoreGradientIsMaskedWeightGradientTimesW) {
  Rng rng(15);
  MaskedLinear layer(5, 4, PruningMethod::kTopK, 0.0, 1.0, rng);
  for (double& s : layer.scores().mutable_data()) s = rng.uniform(-1, 1);
  std::vector<double> xv(15), wv(12);
  for (double& v : xv) v = rng.uniform(-1, 1);
  for (double& v : wv) v = rng.uniform(-1, 1);
  MaskContext ctx;
  ctx.threshold = 0.5;
  sum(mul(masked_forward(layer, Tensor({3, 5}, xv), ctx), Tensor({3, 4}, wv))).backward();
  // dL/d(W .* M)[o][i] = sum_b w_out[b][o] x[b][i].
  std::vector<double> g(20, 0.0);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < 5; ++i) g[o * 5 + i] += wv[b * 4 + o] * xv[b * 5 + i];
  const auto expected = movement_score_gradient(layer, g);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_NEAR(layer.scores().grad()[i], expected[i], 1e-14);
    EXPECT_NEAR(expected[i], g[i] * layer.weight()[i], 1e-15);
  }
  MaskedLinear magnitude(2, 2, PruningMethod::kMagnitude, 0.0, 1.0, rng);
  EXPECT_THROW(movement_score_gradient(magnitude, std::vector<double>(4)), ConfigError);
}

TEST(Movement, FiveSgdStepsMatchAccumulatedMovementOracle) {
  Rng rng(16);
  MaskedLinear layer(3, 2, PruningMethod::kTopK, 0.0, 1.0, rng);
  Optimizer sgd({{"s", layer.scores(), ParameterGroup::kScores}}, OptimizerKind::kSgd);
  const double lr = 0.3;
  std::vector<double> oracle(6, 0.0);
  const auto w = layer.weight().data();
  MaskContext ctx;
  ctx.threshold = 0.5;
  for (int step = 0; step < 5; ++step) {
    std::vector<double> xv(12), wv(8);
    for (double& v : xv) v = rng.uniform(-1, 1);
    for (double& v : wv) v = rng.uniform(-1, 1);
    sgd.zero_grad();
    sum(mul(masked_forward(layer, Tensor({4, 3}, xv), ctx), Tensor({4, 2}, wv))).backward();
    sgd.step({0.0, lr, 0.0});
    for (std::size_t o = 0; o < 2; ++o) {
      for (std::size_t i = 0; i < 3; ++i) {
        double g = 0.0;
        for (std::size_t b = 0; b < 4; ++b) g += wv[b * 2 + o] * xv[b * 3 + i];
        oracle[o * 3 + i] -= lr * g * w[o * 3 + i];
      }
    }
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(layer.scores()[i], oracle[i], 1e-12);
}

TEST(Schedule, EndpointAnchors) {
  SparsitySchedule s;  // initial 1, final 0.10, warmups 1
  s.warmup_steps = 2100;
  s.total_steps = 52625;
  s.validate();
  EXPECT_EQ(s.at(0), 1.0);
  EXPECT_EQ(s.at(s.total_steps), 0.10);
  EXPECT_EQ(s.at(s.total_steps + 50), 0.10);
}

TEST(Schedule, ZeroWarmupMidpointIsOneEighth) {
  SparsitySchedule s;
  s.final_threshold = 0.0;
  s.warmup_steps = 0;
  s.total_steps = 1000;
  EXPECT_NEAR(s.at(500), 0.125, 1e-12);
  EXPECT_EQ(cubic_threshold(s, 500), s.at(500));
}

TEST(Schedule, MonotoneAndContinuousAtWarmupBoundaries) {
  SparsitySchedule s;
  s.warmup_steps = 300;
  s.total_steps = 10000;
  double prev = s.at(0);
  for (std::size_t t = 1; t <= s.total_steps; ++t) {
    const double v = s.at(t);
    ASSERT_LE(v, prev);
    prev = v;
  }
  EXPECT_NEAR(s.at(300), 1.0, 1e-12);
  EXPECT_NEAR(s.at(299), s.at(300), 1e-12);
  EXPECT_NEAR(s.at(9700), 0.10, 1e-12);
  EXPECT_NEAR(s.at(9701), s.at(9700), 1e-12);
}

TEST(Schedule, Validation) {
  SparsitySchedule s;
  s.total_steps = 10;
  s.warmup_steps = 5;
  EXPECT_THROW(s.validate(), ConfigError);  // ramp empty
  s.warmup_steps = 1;
  s.final_threshold = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s.initial_threshold = 0.0;
  s.final_threshold = 0.1;
  EXPECT_NO_THROW(s.validate(PruningMethod::kSigmoidThreshold));
  EXPECT_THROW(s.validate(PruningMethod::kTopK), ConfigError);
}

TEST(HardConcrete, HandExamples) {
  const HardConcreteParams p;
  const std::vector<double> half = {0.5};
  const auto sample = hard_concrete_sample(Tensor({1}, {0.0}), half, p);
  EXPECT_NEAR(sample.stretched_probability[0], 0.5, 1e-15);
  EXPECT_NEAR(sample.stretched[0], 0.5, 1e-15);
  EXPECT_NEAR(sample.mask[0], 0.5, 1e-15);
  // u = 1/2 cancels the logistic noise: s_bar = sigmoid(s / beta).
  const auto s2 = hard_concrete_sample(Tensor({1}, {1.3}), half, p);
  EXPECT_NEAR(s2.stretched_probability[0], 1.0 / (1.0 + std::exp(-1.3 / p.beta)), 1e-15);

  EXPECT_NEAR(l0_inference_mask(Tensor({1}, {0.0}), p)[0], 0.8, 1e-12);
  EXPECT_EQ(l0_inference_mask(Tensor({1}, {-50.0}), p)[0], 0.0);
  EXPECT_EQ(l0_inference_mask(Tensor({1}, {50.0}), p)[0], 1.0);
}

TEST(HardConcrete, MaskAlwaysInUnitInterval) {
  Rng rng(17);
  const HardConcreteParams p;
  std::vector<double> s(1000);
  for (double& x : s) x = rng.uniform(-8, 8);
  const auto u = hard_concrete_noise(s.size(), rng);
  const auto m = hard_concrete_sample(Tensor({1000}, s), u, p).mask;
  for (double x : m.data()) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
}

TEST(HardConcrete, EmpiricalMeanMatchesNumericalIntegration) {
  const HardConcreteParams p;
  Rng rng(18);
  for (const double s : {-2.0, 0.0, 2.0}) {
    // Midpoint rule over u of the clamped stretched gate.
    const std::size_t grid = 400000;
    double integral = 0.0;
    for (std::size_t i = 0; i < grid; ++i) {
      const double u = (double(i) + 0.5) / double(grid);
      const double sbar = 1.0 / (1.0 + std::exp(-(std::log(u) - std::log(1.0 - u) + s) / p.beta));
      integral += std::clamp(sbar * (p.epsilon - p.gamma) + p.gamma, 0.0, 1.0);
    }
    integral /= double(grid);

    const std::size_t n = 100000;
    const auto u = hard_concrete_noise(n, rng);
    const auto m = hard_concrete_sample(Tensor::full({n}, s), u, p).mask;
    double mean = 0.0, sq = 0.0;
    for (double x : m.data()) mean += x;
    mean /= double(n);
    for (double x : m.data()) sq += (x - mean) * (x - mean);
    const double se = std::sqrt(sq / double(n - 1) / double(n));
    EXPECT_LT(std::abs(mean - integral), 3.0 * se) << "s=" << s;
  }
}

TEST(L0Penalty, ClosedFormLimitsAndMonotone) {
  const HardConcreteParams p;
  const double shift = p.beta * std::log(-p.gamma / p.epsilon);
  EXPECT_NEAR(l0_penalty(Tensor({2}, {0.0, 1.0}), p).item(),
              1.0 / (1.0 + std::exp(shift)) + 1.0 / (1.0 + std::exp(shift - 1.0)), 1e-15);
  EXPECT_LT(l0_penalty(Tensor({3}, {-1e3, -1e3, -1e3}), p).item(), 1e-300);
  double prev = -1.0;
  for (double s = -5.0; s <= 5.0; s += 0.5) {
    const double v = l0_penalty(Tensor({1}, {s}), p).item();
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(SoftMovement, ThresholdAndStraightThrough) {
  const Tensor s = Tensor({3}, {0.0, -20.0, 20.0}, true);
  const Tensor m = soft_movement_mask(s, 0.4);
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 0.0);
  EXPECT_EQ(m[2], 1.0);
  sum(m).backward();
  for (double g : s.grad()) EXPECT_EQ(g, 1.0);
  const Tensor negative = soft_movement_mask(Tensor::full({5}, -50.0), 0.1);
  for (double x : negative.data()) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(soft_movement_mask(s, 1.0), std::invalid_argument);
  EXPECT_NEAR(l1_regularizer(Tensor({2}, {0.0, 0.0})).item(), 1.0, 1e-15);
}

TEST(PruningMethod, NamesRoundTrip) {
  for (const auto m : {PruningMethod::kNone, PruningMethod::kMagnitude, PruningMethod::kTopK, PruningMethod::kL0,
                       PruningMethod::kSigmoidThreshold}) {
    EXPECT_EQ(parse_pruning_method(to_string(m)), m);
  }
  EXPECT_EQ(to_string(PruningMethod::kSigmoidThreshold), "sigmoied_threshold");
  EXPECT_THROW(parse_pruning_method("movement"), ConfigError);
}

}  // namespace
}  // namespace bermo
