#include <benchmark/benchmark.h>

#include <vector>

#include "fata/eval.hpp"
#include "fata/training.hpp"
#include "fixtures.hpp"

using namespace fata;
using namespace fata::testing;

namespace {

ModelConfig bench_config(ModelMode mode, std::size_t length) {
  auto c = small_config(mode, length, 32);
  c.dropout = 0.1;
  return c;
}

const PreparedData& bench_data() {
  static const auto data = tiny_prepared(64, 12, 4, 6, 8, 10, 19);
  return data;
}

void encoder_forward(benchmark::State& state, ModelMode mode) {
  const auto& data = bench_data();
  auto cfg = bench_config(mode, 10);
  cfg.time_scale = data.time_scale;
  const auto model = FataModel<float>::create(cfg, data.vocab, 1);
  auto ws = views(model, data);
  ws.resize(32);
  for (auto _ : state) benchmark::DoNotOptimize(model.sequence_embeddings(ws));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ws.size()));
  state.counters["level_one_tokens"] = static_cast<double>(model.level_one_tokens());
}

void pretrain_epoch(benchmark::State& state, ModelMode mode) {
  const auto& data = bench_data();
  auto cfg = bench_config(mode, 10);
  cfg.time_scale = data.time_scale;
  TrainConfig t;
  t.pretrain_epochs = 1;
  t.batch_size = 32;
  t.seed = 2;
  for (auto _ : state) {
    state.PauseTiming();
    auto model = FataModel<float>::create(cfg, data.vocab, 1);
    const auto ws = views(model, data);
    state.ResumeTiming();
    benchmark::DoNotOptimize(pretrain(model, ws, data.vocab, t));
  }
}

void roc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(uniform_index(rng, 2));
    s[i] = standard_normal(rng) + y[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(s, y));
  state.SetComplexityN(state.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(encoder_forward, fata, ModelMode::Fata)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(encoder_forward, replicated_static, ModelMode::ReplicatedStatic)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(pretrain_epoch, fata, ModelMode::Fata)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(pretrain_epoch, replicated_static, ModelMode::ReplicatedStatic)->Unit(benchmark::kMillisecond);
BENCHMARK(roc)->RangeMultiplier(8)->Range(1 << 8, 1 << 17)->Complexity(benchmark::oNLogN);
BENCHMARK_MAIN();
