#include <benchmark/benchmark.h>

#include <random>

#include "diffcod/metrics.hpp"
#include "diffcod/ops.hpp"
#include "diffcod/sampler.hpp"
#include "diffcod/synth.hpp"
#include "diffcod/trainer.hpp"

using namespace diffcod;

namespace {

Tensor<float> uniform(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.span()) v = u(rng);
  return t;
}

ModelConfig small_model() {
  ModelConfig m;
  m.denoiser.widths = {8, 16, 32, 48, 64};
  return m;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const ag::Var<float> x(uniform({4, c, 32, 32}, 1));
  const ag::Var<float> w(uniform({c, c, 3, 3}, 2));
  const ag::Var<float> b(uniform({c}, 3));
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv3x3Forward)->Arg(16)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.batch_size = static_cast<int>(state.range(0));
  cfg.model = small_model();
  Trainer trainer(cfg);
  SynthConfig synth;
  const int b = cfg.batch_size;
  Tensor<float> images({b, 3, 64, 64}), masks({b, 1, 64, 64});
  for (int i = 0; i < b; ++i) {
    const auto p = generate_pair(synth, i);
    std::copy(p.image.span().begin(), p.image.span().end(), images.data() + i * p.image.size());
    std::copy(p.mask.span().begin(), p.mask.span().end(), masks.data() + i * p.mask.size());
  }
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(images, masks));
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Sample(benchmark::State& state) {
  const DiffCodModel<float> model(small_model());
  const auto schedule = make_linear_schedule(1000);
  Tensor<float> images = uniform({1, 3, 64, 64}, 4);
  for (auto& v : images.span()) v = 0.5f * (v + 1);
  SampleOptions options;
  options.num_steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sample(model, schedule, images, options));
}
BENCHMARK(BM_Sample)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_EvaluatePair(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  Plane pred(n, n), gt(n, n);
  for (auto& v : pred.values) v = u(rng);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int dx = x - n / 2, dy = y - n / 2;
      gt.at(y, x) = dx * dx + dy * dy < n * n / 9 ? 1.0 : 0.0;
    }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_pair(pred, gt));
}
BENCHMARK(BM_EvaluatePair)->Arg(64)->Arg(352)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
