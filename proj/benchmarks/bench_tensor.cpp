#include <benchmark/benchmark.h>

#include "atd/ops.hpp"
#include "atd/rng.hpp"

using namespace atd;

namespace {

Tensor randn(Shape shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = randn({n, 64}, 1);
  const Tensor b = randn({64, 64}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n) * 64 * 64);
}
BENCHMARK(BM_matmul)->Arg(256)->Arg(1024)->Arg(4096);

void BM_matmul_backward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Tensor a = randn({n, 64}, 1);
  Tensor b = randn({64, 64}, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(sum(matmul(a, b)));
  }
}
BENCHMARK(BM_matmul_backward)->Arg(1024);

void BM_conv2d(benchmark::State& state) {
  const Tensor x = randn({24, 32, 32}, 1);
  const Tensor w = randn({24, 24, 3, 3}, 2);
  const Tensor b = randn({24}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, b));
  }
}
BENCHMARK(BM_conv2d);

void BM_softmax(benchmark::State& state) {
  const Tensor x = randn({1024, 128}, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax(x));
  }
}
BENCHMARK(BM_softmax);

void BM_pixel_shuffle(benchmark::State& state) {
  const Tensor x = randn({12, 64, 64}, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pixel_shuffle(x, 2));
  }
}
BENCHMARK(BM_pixel_shuffle);

}  // namespace
