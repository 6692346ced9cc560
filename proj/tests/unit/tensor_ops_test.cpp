#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bermo/error.hpp"
#include "bermo/gradcheck.hpp"
#include "bermo/ops.hpp"
#include "bermo/rng.hpp"
#include "bermo/tensor.hpp"

namespace bermo {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

TEST(Tensor, ShapeAndFactories) {
  const Tensor z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  EXPECT_EQ(z.dim(), 2u);
  EXPECT_EQ(to_string(z.shape()), "[2, 3]");
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_EQ(Tensor::scalar(4.0).dim(), 0u);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
  EXPECT_THROW(z.item(), ShapeError);
}

TEST(Tensor, BackwardRequiresScalar) {
  Tensor x = Tensor::full({2}, 1.0, true);
  EXPECT_THROW(scale(x, 2.0).backward(), ShapeError);
}

TEST(Tensor, LeavesAccumulateAcrossBackwardCalls) {
  Tensor x = Tensor({2}, {1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Tensor, SharedSubexpressionGetsBothContributions) {
  Tensor x = Tensor::scalar(3.0, true);
  const Tensor y = mul(x, x);
  add(y, scale(y, 2.0)).backward();  // 3 x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 18.0);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::full({2}, 1.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = sum(scale(x, 2.0));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Tensor, DetachCutsHistory) {
  Tensor x = Tensor::full({2}, 1.0, true);
  const Tensor d = scale(x, 3.0).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d[1], 3.0);
}

TEST(Ops, BroadcastSuffixAndScalar) {
  Tensor a = Tensor({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor({3}, {10, 20, 30}, true);
  const Tensor c = add(a, b);
  EXPECT_EQ(c[4], 25.0);
  sum(c).backward();
  EXPECT_EQ(b.grad()[0], 2.0);
  EXPECT_THROW(add(a, Tensor::zeros({2})), ShapeError);
}

TEST(Ops, MatmulMatchesLoopOracle) {
  Rng rng(1);
  const Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 5; ++k) ref += a[i * 5 + k] * b[k * 4 + j];
      EXPECT_NEAR(c[i * 4 + j], ref, 1e-14);
    }
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, LinearUsesOutInWeightLayout) {
  const Tensor x = Tensor({1, 2}, {1.0, 2.0});
  const Tensor w = Tensor({3, 2}, {1, 0, 0, 1, 1, 1});
  const Tensor b = Tensor({3}, {0.5, 0.5, 0.5});
  const Tensor y = linear(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{1, 3}));
  EXPECT_EQ(y[0], 1.5);
  EXPECT_EQ(y[1], 2.5);
  EXPECT_EQ(y[2], 3.5);
}

TEST(Ops, PermuteAndReshapeRoundTrip) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  const Tensor p = permute(x, {2, 0, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(p[(3 * 2 + 1) * 3 + 2], x[(1 * 3 + 2) * 4 + 3]);
  const Tensor back = permute(p, {1, 2, 0});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
  EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(3);
  const Tensor s = softmax(random_tensor({4, 7}, rng));
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) total += s[r * 7 + c];
    EXPECT_NEAR(total, 1.0, 1e-15);
  }
}

TEST(Ops, SoftmaxShiftInvarianceIsBitwiseForDyadicLogits) {
  const Tensor x = Tensor({1, 4}, {0.5, -1.25, 2.0, 0.75});
  const Tensor shifted = add_scalar(x, 3.0);
  const Tensor a = softmax(x), b = softmax(shifted);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Ops, SoftmaxOfFullyMaskedRowIsZero) {
  const double inf = std::numeric_limits<double>::infinity();
  const Tensor s = softmax(Tensor({2, 2}, {-inf, -inf, 0.0, -inf}));
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_EQ(s[2], 1.0);
  EXPECT_EQ(s[3], 0.0);
}

TEST(Ops, LayerNormStandardizesLastAxis) {
  Rng rng(4);
  const Tensor y = layer_norm(random_tensor({3, 8}, rng), 1e-12);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 8; ++c) m += y[r * 8 + c];
    m /= 8.0;
    for (std::size_t c = 0; c < 8; ++c) v += (y[r * 8 + c] - m) * (y[r * 8 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-14);
    EXPECT_NEAR(v / 8.0, 1.0, 1e-9);
  }
}

TEST(Ops, DropoutEvalIsIdentityAndTrainingIsInverted) {
  Rng rng(5);
  const Tensor x = Tensor::full({10000}, 1.0);
  const Tensor eval = dropout(x, 0.3, false, rng);
  EXPECT_EQ(eval.node(), x.node());
  const Tensor train = dropout(x, 0.25, true, rng);
  double total = 0.0;
  for (double v : train.data()) {
    EXPECT_TRUE(v == 0.0 || v == 1.0 / 0.75);
    total += v;
  }
  EXPECT_NEAR(total / 10000.0, 1.0, 0.03);
  EXPECT_THROW(dropout(x, 1.0, true, rng), std::invalid_argument);
}

TEST(Ops, CrossEntropyHandValue) {
  const Tensor logits = Tensor({1, 2}, {0.0, std::log(3.0)});
  const std::vector<int> label = {1};
  EXPECT_NEAR(cross_entropy(logits, label).item(), -std::log(0.75), 1e-15);
  const std::vector<int> bad = {2};
  EXPECT_THROW(cross_entropy(logits, bad), std::out_of_range);
}

TEST(Ops, EmbeddingNamesOffendingIndex) {
  const Tensor table = Tensor::zeros({4, 2});
  const std::vector<std::int64_t> ids = {1, 7};
  try {
    embedding(table, ids, {2});
    FAIL() << "expected out_of_range";
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
}

TEST(Ops, ClampSubgradientVanishesOutsideAndAtBounds) {
  Tensor x = Tensor({4}, {-0.5, 0.0, 0.5, 1.5}, true);
  sum(clamp(x, 0.0, 1.0)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
  EXPECT_EQ(x.grad()[3], 0.0);
}

TEST(Ops, StraightThroughPassesGradientUnchanged) {
  Tensor s = Tensor({3}, {0.1, -2.0, 5.0}, true);
  const Tensor m = straight_through(s, {1.0, 0.0, 1.0});
  EXPECT_EQ(m[1], 0.0);
  sum(mul(m, Tensor({3}, {2.0, 3.0, 4.0}))).backward();
  EXPECT_EQ(s.grad()[0], 2.0);
  EXPECT_EQ(s.grad()[1], 3.0);
  EXPECT_EQ(s.grad()[2], 4.0);
}

TEST(Gradcheck, SmoothAndPiecewiseLinearFunctionsPass) {
  Tensor x = Tensor({3}, {0.3, -0.7, 1.1}, true);
  EXPECT_LT(finite_difference_check([&] { return sum(exp(x)); }, x), 1e-8);
  EXPECT_LT(finite_difference_check([&] { return sum(relu(x)); }, x), 1e-8);
}

TEST(Gradcheck, RejectsNondeterministicFunction) {
  Tensor x = Tensor({1}, {1.0}, true);
  int calls = 0;
  EXPECT_THROW(finite_difference_check([&] { return scale(sum(x), double(++calls)); }, x), NondeterministicFunction);
}

TEST(Gradcheck, RejectsNonLeaf) {
  Tensor x = Tensor({1}, {1.0}, true);
  const Tensor y = scale(x, 2.0);
  EXPECT_THROW(finite_difference_check([&] { return sum(y); }, y), std::invalid_argument);
}

TEST(Gradcheck, EveryRegisteredCheckPasses) {
  for (const auto& r : run_gradchecks("all")) EXPECT_TRUE(r.passed()) << r.module << "/" << r.name << " " << r.max_relative_error;
  EXPECT_THROW(run_gradchecks("nope"), ConfigError);
}

TEST(Rng, SplitsAreIndependentAndReproducible) {
  const Rng root(7);
  Rng a = root.split("a"), a2 = root.split("a"), b = root.split("b");
  const auto x = a.next_u64();
  EXPECT_EQ(x, a2.next_u64());
  EXPECT_NE(x, b.next_u64());
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
}

}  // namespace
}  // namespace bermo
