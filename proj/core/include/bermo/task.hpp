#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "bermo/encoder.hpp"

namespace bermo {

/// Desk-scale classification problems. Token 0 is a leading [CLS] slot.
///
///  - majority: markers 1..C; the label is the marker that occurs most often
///    (strictly). Linearly separable from bag-of-token counts.
///  - parity: the label is the parity of the count of marker token 1.
///  - needle: a single marker token 1 sits at some position; the label is
///    which of C equal position buckets holds it.
enum class TaskKind { kMajority, kParity, kNeedle };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct SyntheticTask {
  TaskKind kind = TaskKind::kMajority;
  std::size_t vocab_size = 32;
  std::size_t seq_len = 16;
  std::size_t num_classes = 2;
  std::size_t train_size = 2000;
  std::size_t val_size = 400;
  std::size_t test_size = 400;
  std::uint64_t seed = 1234;

  /// Throws ConfigError for infeasible sizes (split sizes not divisible by
  /// num_classes, too few tokens or positions for the kind).
  void validate() const;
};

struct Example {
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> segments;
  int label = 0;
};

struct Dataset {
  std::vector<Example> train, val, test;
};

/// Deterministic in `task.seed`; every split has exactly size/num_classes
/// examples per label and no token sequence appears twice across splits.
Dataset generate_task(const SyntheticTask& task);

struct LabeledBatch {
  TokenBatch inputs;
  std::vector<int> labels;
};

/// Gathers `indices` of `examples` into one batch.
LabeledBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices);

}  // namespace bermo
