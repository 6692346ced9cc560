#include <benchmark/benchmark.h>

#include "bermo/combine.hpp"
#include "bermo/model.hpp"
#include "bermo/ops.hpp"
#include "bermo/pruning.hpp"

namespace {

using namespace bermo;

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_TopvMask(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  Rng rng(2);
  std::vector<double> s(n);
  for (double& x : s) x = rng.uniform(-1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(topv_mask(s, 0.1));
  state.SetItemsProcessed(state.iterations() * std::int64_t(n));
}
BENCHMARK(BM_TopvMask)->Arg(4096)->Arg(131072);

void BM_CombineForwardBackward(benchmark::State& state) {
  Rng rng(3);
  const CombineBlock block(4, rng, 0.0);
  std::vector<Tensor> states;
  for (int j = 0; j < 5; ++j) states.push_back(random_tensor({32, 16, 64}, rng, true));
  for (auto _ : state) {
    sum(block.forward(states, false)).backward();
    for (auto& s : states) s.zero_grad();
  }
}
BENCHMARK(BM_CombineForwardBackward);

// One training step of the default toy model: batch 32, seq 16, L=4, d=64.
void BM_ModelStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.pruning = state.range(0) ? PruningMethod::kTopK : PruningMethod::kNone;
  const BermoModel model(cfg, 4);
  Rng rng(5);
  TokenBatch batch;
  batch.batch = 32;
  batch.seq = 16;
  for (std::size_t i = 0; i < 32 * 16; ++i) {
    batch.tokens.push_back(std::int64_t(rng.below(cfg.encoder.vocab_size)));
    batch.segments.push_back(0);
  }
  std::vector<int> labels(32);
  for (int& l : labels) l = int(rng.below(2));
  MaskContext ctx;
  ctx.threshold = 0.5;
  for (auto _ : state) {
    const auto out = model.forward(batch, AttentionMask::full(16), ctx, true, &rng);
    cross_entropy(out.logits, labels).backward();
    for (auto& p : model.parameters()) p.tensor.zero_grad();
  }
}
BENCHMARK(BM_ModelStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
