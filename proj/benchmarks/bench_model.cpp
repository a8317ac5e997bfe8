#include <benchmark/benchmark.h>

#include "atd/model.hpp"
#include "atd/ops.hpp"
#include "atd/rng.hpp"
#include "atd/train.hpp"

using namespace atd;

namespace {

Tensor rand_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor t(Shape{3, h, w});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

void BM_forward_tiny(benchmark::State& state) {
  const Model m = Model::init(preset("atd_tiny", 2), 1);
  const Tensor img = rand_image(32, 32, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.forward(img, Mode::eval, 0));
  }
}
BENCHMARK(BM_forward_tiny);

void BM_forward_light(benchmark::State& state) {
  const Model m = Model::init(preset("atd_light", 2), 1);
  const Tensor img = rand_image(32, 32, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.forward(img, Mode::eval, 0));
  }
}
BENCHMARK(BM_forward_light);

void BM_train_step_tiny(benchmark::State& state) {
  Model m = Model::init(preset("atd_tiny", 2), 1);
  const Tensor lr = rand_image(32, 32, 2);
  const Tensor hr = rand_image(64, 64, 3);
  AdamWState opt;
  TrainConfig cfg;
  uint64_t step = 0;
  for (auto _ : state) {
    for (const auto& [name, t] : m.parameters()) t.zero_grad();
    GradTape tape;
    {
      TapeScope scope(tape);
      tape.backward(l1_loss(m.forward(lr, Mode::train, step++), hr));
    }
    adamw_step(m.parameters(), opt, 1e-4, cfg);
    clamp_temperatures(m);
  }
}
BENCHMARK(BM_train_step_tiny);

}  // namespace

BENCHMARK_MAIN();
