#include <benchmark/benchmark.h>

#include "atd/attention.hpp"
#include "atd/categorize.hpp"
#include "atd/rng.hpp"

using namespace atd;

namespace {

Tensor randn(Shape shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

// Token-dictionary cross-attention across token counts; the linear scaling
// shows up as a flat items/second rate.
void BM_tdca(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng prng(1);
  const TdcaParams p = TdcaParams::init(64, 16, prng);
  const Tensor dict = randn({32, 64}, 2);
  const Tensor x = randn({n, 64}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(tdca(x, dict, p).out);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_tdca)->Arg(1024)->Arg(2048)->Arg(4096)->Arg(8192);

void BM_window_msa(benchmark::State& state) {
  const int shift = static_cast<int>(state.range(0));
  Rng prng(4);
  const WindowAttentionParams p = WindowAttentionParams::init(48, 4, 8, shift, prng);
  const Tensor x = randn({64 * 64, 48}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(window_msa(x, p, 64, 64));
  }
}
BENCHMARK(BM_window_msa)->Arg(0)->Arg(4);

void BM_ac_msa(benchmark::State& state) {
  Rng prng(6);
  const AcMsaParams p = AcMsaParams::init(48, 4, prng);
  const Tensor x = randn({64 * 64, 48}, 7);
  const Tensor attn = softmax(randn({64 * 64, 64}, 8));
  for (auto _ : state) {
    benchmark::DoNotOptimize(ac_msa(x, attn, p, 128, Mode::eval, 0));
  }
}
BENCHMARK(BM_ac_msa);

void BM_sub_categorize(benchmark::State& state) {
  Rng rng(9);
  std::vector<int> labels(4096);
  for (int& l : labels) l = rng.randint(0, 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sub_categorize(labels, 128, Mode::train, 11));
  }
}
BENCHMARK(BM_sub_categorize);

}  // namespace
