#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bermo/error.hpp"
#include "bermo/ops.hpp"
#include "bermo/optim.hpp"

namespace bermo {
namespace {

TEST(Optimizer, SgdUsesPerGroupRates) {
  Tensor w = Tensor({2}, {1.0, 2.0}, true), s = Tensor({1}, {0.5}, true), c = Tensor({1}, {3.0}, true);
  Optimizer opt({{"w", w, ParameterGroup::kWeights}, {"s", s, ParameterGroup::kScores},
                 {"c", c, ParameterGroup::kSkipConnection}},
                OptimizerKind::kSgd);
  sum(add(add(sum(w), sum(s)), sum(c))).backward();
  opt.step({0.5, 0.25, 0.125});
  EXPECT_EQ(w[0], 0.5);
  EXPECT_EQ(w[1], 1.5);
  EXPECT_EQ(s[0], 0.25);
  EXPECT_EQ(c[0], 2.875);
}

TEST(Optimizer, AdamFirstStepMovesBySignTimesRate) {
  Tensor w = Tensor({3}, {1.0, -1.0, 0.0}, true);
  Optimizer opt({{"w", w, ParameterGroup::kWeights}}, OptimizerKind::kAdamW);
  sum(mul(w, Tensor({3}, {2.0, -0.5, 1e-3}))).backward();
  opt.step({0.1, 0.0, 0.0});
  // m_hat = g, v_hat = g^2, so the update is g / (|g| + eps).
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], -1.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(w[2], -0.1 * 1e-3 / (1e-3 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(Optimizer, WeightDecayTouchesOnlyWeightsGroup) {
  AdamSettings adam;
  adam.weight_decay = 0.1;
  Tensor w = Tensor({1}, {2.0}, true), s = Tensor({1}, {2.0}, true);
  Optimizer opt({{"w", w, ParameterGroup::kWeights}, {"s", s, ParameterGroup::kScores}}, OptimizerKind::kAdamW, adam);
  sum(add(scale(sum(w), 0.0), scale(sum(s), 0.0))).backward();
  opt.step({1.0, 1.0, 1.0});
  EXPECT_NEAR(w[0], 2.0 - 0.1 * 2.0, 1e-15);
  EXPECT_EQ(s[0], 2.0);
}

TEST(Optimizer, TensorsWithoutGradientAreUntouched) {
  Tensor w = Tensor({1}, {1.0}, true), unused = Tensor({1}, {5.0}, true);
  Optimizer opt({{"w", w, ParameterGroup::kWeights}, {"u", unused, ParameterGroup::kWeights}}, OptimizerKind::kAdamW);
  sum(w).backward();
  opt.step({0.1, 0.1, 0.1});
  EXPECT_EQ(unused[0], 5.0);
  EXPECT_NE(w[0], 1.0);
  EXPECT_TRUE(opt.parameters_finite());
  w.mutable_data()[0] = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(opt.parameters_finite());
}

TEST(Optimizer, NamesRoundTrip) {
  EXPECT_EQ(parse_optimizer(to_string(OptimizerKind::kAdamW)), OptimizerKind::kAdamW);
  EXPECT_EQ(parse_optimizer(to_string(OptimizerKind::kSgd)), OptimizerKind::kSgd);
  EXPECT_THROW(parse_optimizer("lamb"), ConfigError);
}

}  // namespace
}  // namespace bermo
