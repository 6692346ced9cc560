#include "bermo/task.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <unordered_set>

#include "bermo/error.hpp"
#include "bermo/rng.hpp"

namespace bermo {

namespace {

constexpr std::int64_t kClsToken = 0;
constexpr int kMaxAttempts = 1000;

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// Content tokens (positions 1..seq-1) for one example of `label`.
std::vector<std::int64_t> draw_content(const SyntheticTask& t, int label, Rng& rng) {
  const std::size_t n = t.seq_len - 1;
  const auto classes = static_cast<std::int64_t>(t.num_classes);
  std::vector<std::int64_t> content;
  content.reserve(n);
  switch (t.kind) {
    case TaskKind::kMajority: {
      // Winner count w in [1, n / classes]; every other marker strictly fewer.
      const std::size_t cap = n / t.num_classes;
      const std::size_t winner = 1 + rng.below(cap);
      for (std::int64_t c = 0; c < classes; ++c) {
        const std::size_t count = c == label ? winner : rng.below(winner);
        content.insert(content.end(), count, 1 + c);
      }
      const auto filler_lo = 1 + classes;
      const auto filler_span = std::int64_t(t.vocab_size) - filler_lo;
      while (content.size() < n) content.push_back(filler_lo + std::int64_t(rng.below(std::uint64_t(filler_span))));
      shuffle(content, rng);
      break;
    }
    case TaskKind::kParity: {
      // Marker count uniform over the values in [0, n] with the label's parity.
      const std::size_t options = (n - std::size_t(label)) / 2 + 1;
      const std::size_t count = std::size_t(label) + 2 * rng.below(options);
      content.assign(count, 1);
      while (content.size() < n) content.push_back(2 + std::int64_t(rng.below(t.vocab_size - 2)));
      shuffle(content, rng);
      break;
    }
    case TaskKind::kNeedle: {
      // Bucket b covers content positions [b n / C, (b + 1) n / C).
      const std::size_t lo = std::size_t(label) * n / t.num_classes;
      const std::size_t hi = (std::size_t(label) + 1) * n / t.num_classes;
      const std::size_t pos = lo + rng.below(hi - lo);
      for (std::size_t i = 0; i < n; ++i) content.push_back(i == pos ? 1 : 2 + std::int64_t(rng.below(t.vocab_size - 2)));
      break;
    }
  }
  return content;
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kMajority: return "majority-token";
    case TaskKind::kParity: return "parity-of-marked-tokens";
    case TaskKind::kNeedle: return "needle-position";
  }
  return "majority-token";
}

TaskKind parse_task_kind(std::string_view name) {
  for (auto k : {TaskKind::kMajority, TaskKind::kParity, TaskKind::kNeedle}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown task kind '" + std::string(name) +
                    "' (expected majority-token, parity-of-marked-tokens or needle-position)");
}

void SyntheticTask::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic tasks need at least two classes");
  if (seq_len < 2) throw ConfigError("seq_len must leave room for content after [CLS]");
  for (std::size_t size : {train_size, val_size, test_size}) {
    if (size == 0 || size % num_classes != 0) {
      throw ConfigError("split size " + std::to_string(size) + " is not a positive multiple of num_classes " +
                        std::to_string(num_classes));
    }
  }
  const std::size_t content = seq_len - 1;
  switch (kind) {
    case TaskKind::kMajority:
      if (vocab_size < num_classes + 2) throw ConfigError("majority-token needs vocab_size >= num_classes + 2");
      if (content < num_classes) throw ConfigError("majority-token needs seq_len > num_classes");
      break;
    case TaskKind::kParity:
      if (num_classes != 2) throw ConfigError("parity-of-marked-tokens has exactly two classes");
      if (vocab_size < 3) throw ConfigError("parity-of-marked-tokens needs vocab_size >= 3");
      break;
    case TaskKind::kNeedle:
      if (vocab_size < 3) throw ConfigError("needle-position needs vocab_size >= 3");
      if (content < num_classes) throw ConfigError("needle-position needs at least one position per class");
      break;
  }
}

Dataset generate_task(const SyntheticTask& task) {
  task.validate();
  Rng rng(task.seed);
  std::unordered_set<std::string> seen;
  auto make_split = [&](std::size_t size, std::vector<Example>& out) {
    std::vector<int> labels(size);
    for (std::size_t i = 0; i < size; ++i) labels[i] = int(i % task.num_classes);
    shuffle(labels, rng);
    out.reserve(size);
    for (int label : labels) {
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxAttempts) {
          throw ConfigError("cannot draw " + std::to_string(size) + " distinct sequences; enlarge vocab_size or seq_len");
        }
        std::vector<std::int64_t> content = draw_content(task, label, rng);
        std::string key(reinterpret_cast<const char*>(content.data()), content.size() * sizeof(std::int64_t));
        if (!seen.insert(std::move(key)).second) continue;
        Example ex;
        ex.label = label;
        ex.tokens.reserve(task.seq_len);
        ex.tokens.push_back(kClsToken);
        ex.tokens.insert(ex.tokens.end(), content.begin(), content.end());
        ex.segments.resize(task.seq_len);
        for (std::size_t p = 0; p < task.seq_len; ++p) ex.segments[p] = p < task.seq_len / 2 ? 0 : 1;
        out.push_back(std::move(ex));
        break;
      }
    }
  };
  Dataset d;
  make_split(task.train_size, d.train);
  make_split(task.val_size, d.val);
  make_split(task.test_size, d.test);
  return d;
}

LabeledBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices) {
  LabeledBatch b;
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  b.inputs.batch = indices.size();
  b.inputs.seq = examples[indices[0]].tokens.size();
  b.inputs.tokens.reserve(b.inputs.batch * b.inputs.seq);
  b.inputs.segments.reserve(b.inputs.batch * b.inputs.seq);
  for (std::size_t i : indices) {
    const Example& ex = examples[i];
    if (ex.tokens.size() != b.inputs.seq) throw std::invalid_argument("make_batch: ragged sequence lengths");
    b.inputs.tokens.insert(b.inputs.tokens.end(), ex.tokens.begin(), ex.tokens.end());
    b.inputs.segments.insert(b.inputs.segments.end(), ex.segments.begin(), ex.segments.end());
    b.labels.push_back(ex.label);
  }
  return b;
}

}  // namespace bermo
