#include "eediff/checkpoint.hpp"
#include "eediff/eval.hpp"
#include "eediff/model.hpp"
#include "eediff/sampling.hpp"
#include "eediff/training.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace eediff;

namespace {

BackboneConfig toy(int depth) {
  BackboneConfig c;
  c.depth = depth;
  c.hidden_dim = 64;
  c.num_heads = 4;
  c.input_shape = {2};
  c.skip_pairs = default_skip_pairs(depth);
  return c;
}

Matrix normal(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return standard_normal(rows, cols, rng);
}

void BM_ForwardFull(benchmark::State& state) {
  const Denoiser net(toy(13), 1);
  const Matrix x = normal(state.range(0), 2, 2);
  const std::vector<int> t(static_cast<std::size_t>(x.rows()), 500);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_full(x, t));
  state.SetItemsProcessed(state.iterations() * x.rows());
}
BENCHMARK(BM_ForwardFull)->Arg(64)->Arg(1000);

// Exit depth forced through min_layer with a threshold every head passes.
void BM_EarlyExit(benchmark::State& state) {
  const EarlyExitModel model(toy(13), false, 1);
  const Matrix x = normal(1000, 2, 2);
  ExitPolicy p;
  p.threshold = 2.0;
  p.min_layer = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(early_exit_denoise(model, x, 500, p));
  state.SetItemsProcessed(state.iterations() * x.rows());
}
BENCHMARK(BM_EarlyExit)->Arg(1)->Arg(4)->Arg(7)->Arg(13);

void BM_TrainStep(benchmark::State& state) {
  const RunConfig c = config_from_overrides({"train.batch_size=" + std::to_string(state.range(0))});
  TrainingState st = initial_state(c);
  const Dataset d = make_toy_dataset(DatasetKind::GaussianMixture, 4096, 1);
  const NoiseSchedule sched = c.schedule.build();
  for (auto _ : state) {
    train_step(st, draw_batch(d, sched, c.train.batch_size, 0, st.step), sched, c.loss);
  }
}
BENCHMARK(BM_TrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Mmd(benchmark::State& state) {
  const Matrix a = normal(state.range(0), 2, 1), b = normal(state.range(0), 2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mmd_squared(a, b, {0.1, 0.2, 0.5, 1.0, 2.0}));
}
BENCHMARK(BM_Mmd)->Arg(1000)->Arg(2000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
