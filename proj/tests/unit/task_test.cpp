#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "bermo/error.hpp"
#include "bermo/task.hpp"

namespace bermo {
namespace {

// Label recomputed from the tokens alone.
int oracle_label(const SyntheticTask& t, const Example& ex) {
  const std::size_t n = t.seq_len - 1;
  switch (t.kind) {
    case TaskKind::kMajority: {
      std::vector<int> counts(t.num_classes, 0);
      for (std::size_t p = 1; p < t.seq_len; ++p) {
        const auto tok = ex.tokens[p];
        if (tok >= 1 && tok <= std::int64_t(t.num_classes)) ++counts[std::size_t(tok - 1)];
      }
      int best = 0;
      for (std::size_t c = 1; c < counts.size(); ++c) {
        if (counts[c] > counts[std::size_t(best)]) best = int(c);
      }
      for (std::size_t c = 0; c < counts.size(); ++c) {
        if (int(c) != best && counts[c] == counts[std::size_t(best)]) return -1;  // no strict winner
      }
      return best;
    }
    case TaskKind::kParity: {
      int ones = 0;
      for (std::size_t p = 1; p < t.seq_len; ++p) ones += ex.tokens[p] == 1;
      return ones % 2;
    }
    case TaskKind::kNeedle: {
      int found = -1;
      for (std::size_t p = 1; p < t.seq_len; ++p) {
        if (ex.tokens[p] != 1) continue;
        if (found != -1) return -1;
        const std::size_t i = p - 1;
        for (std::size_t b = 0; b < t.num_classes; ++b) {
          if (i >= b * n / t.num_classes && i < (b + 1) * n / t.num_classes) found = int(b);
        }
      }
      return found;
    }
  }
  return -1;
}

SyntheticTask make(TaskKind kind, std::size_t classes) {
  SyntheticTask t;
  t.kind = kind;
  t.num_classes = classes;
  t.train_size = 600;
  t.val_size = 120;
  t.test_size = 120;
  return t;
}

TEST(Task, LabelsMatchTokenOracleAndSplitsAreBalanced) {
  for (const auto& t : {make(TaskKind::kMajority, 2), make(TaskKind::kMajority, 3), make(TaskKind::kParity, 2),
                        make(TaskKind::kNeedle, 2), make(TaskKind::kNeedle, 4)}) {
    const Dataset d = generate_task(t);
    for (const auto* split : {&d.train, &d.val, &d.test}) {
      std::map<int, std::size_t> per_label;
      for (const auto& ex : *split) {
        ASSERT_EQ(ex.tokens.size(), t.seq_len);
        ASSERT_EQ(ex.tokens[0], 0);
        ASSERT_EQ(oracle_label(t, ex), ex.label) << to_string(t.kind);
        ++per_label[ex.label];
      }
      ASSERT_EQ(per_label.size(), t.num_classes);
      for (const auto& [label, count] : per_label) EXPECT_EQ(count, split->size() / t.num_classes);
    }
  }
}

TEST(Task, DeterministicInSeedAndSplitsDisjoint) {
  const SyntheticTask t = make(TaskKind::kMajority, 2);
  const Dataset a = generate_task(t), b = generate_task(t);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].tokens, b.train[i].tokens);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
  std::set<std::vector<std::int64_t>> seen;
  for (const auto* split : {&a.train, &a.val, &a.test}) {
    for (const auto& ex : *split) EXPECT_TRUE(seen.insert(ex.tokens).second);
  }
  SyntheticTask other = t;
  other.seed = t.seed + 1;
  EXPECT_NE(generate_task(other).train[0].tokens, a.train[0].tokens);
}

TEST(Task, MajorityIsSolvedByBagOfTokensLogisticRegression) {
  SyntheticTask t = make(TaskKind::kMajority, 2);
  const Dataset d = generate_task(t);
  const std::size_t v = t.vocab_size;
  auto features = [&](const Example& ex) {
    std::vector<double> f(v + 1, 0.0);
    for (std::size_t p = 1; p < t.seq_len; ++p) f[std::size_t(ex.tokens[p])] += 1.0;
    f[v] = 1.0;
    return f;
  };
  std::vector<double> w(v + 1, 0.0);
  for (int epoch = 0; epoch < 200; ++epoch) {
    std::vector<double> g(v + 1, 0.0);
    for (const auto& ex : d.train) {
      const auto f = features(ex);
      double z = 0.0;
      for (std::size_t i = 0; i <= v; ++i) z += w[i] * f[i];
      const double err = 1.0 / (1.0 + std::exp(-z)) - double(ex.label);
      for (std::size_t i = 0; i <= v; ++i) g[i] += err * f[i];
    }
    for (std::size_t i = 0; i <= v; ++i) w[i] -= 0.05 * g[i] / double(d.train.size());
  }
  std::size_t correct = 0;
  for (const auto& ex : d.test) {
    const auto f = features(ex);
    double z = 0.0;
    for (std::size_t i = 0; i <= v; ++i) z += w[i] * f[i];
    correct += (z > 0.0) == (ex.label == 1);
  }
  EXPECT_GT(double(correct) / double(d.test.size()), 0.9);
}

TEST(Task, ValidationAndBatching) {
  SyntheticTask t = make(TaskKind::kParity, 3);
  EXPECT_THROW(t.validate(), ConfigError);
  t = make(TaskKind::kMajority, 2);
  t.train_size = 601;
  EXPECT_THROW(t.validate(), ConfigError);
  t = make(TaskKind::kNeedle, 2);
  t.seq_len = 2;
  EXPECT_THROW(t.validate(), ConfigError);
  t = make(TaskKind::kParity, 2);
  t.seq_len = 3;
  t.vocab_size = 3;
  EXPECT_THROW(generate_task(t), ConfigError);  // too few distinct sequences
  EXPECT_THROW(parse_task_kind("sst2"), ConfigError);

  const Dataset d = generate_task(make(TaskKind::kMajority, 2));
  const std::vector<std::size_t> idx = {3, 1};
  const auto b = make_batch(d.train, idx);
  EXPECT_EQ(b.inputs.batch, 2u);
  EXPECT_EQ(b.labels[0], d.train[3].label);
  EXPECT_EQ(b.inputs.tokens[b.inputs.seq], d.train[1].tokens[0]);
  EXPECT_THROW(make_batch(d.train, std::span<const std::size_t>{}), std::invalid_argument);
}

}  // namespace
}  // namespace bermo
