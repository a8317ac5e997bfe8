#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "atd/attention.hpp"
#include "atd/errors.hpp"
#include "atd/ops.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace atd;
using namespace atdtest;

namespace {

WindowAttentionParams make_params(int d, int heads, int w, int shift, uint64_t seed) {
  Rng rng(seed);
  return WindowAttentionParams::init(d, heads, w, shift, rng);
}

}  // namespace

TEST_CASE("window_msa: identical tokens give identical output rows") {
  WindowAttentionParams p = make_params(8, 2, 4, 0, 1);
  Tensor x(Shape{16, 8});
  Rng rng(2);
  for (int j = 0; j < 8; ++j) {
    const double v = rng.normal();
    for (int i = 0; i < 16; ++i) x[static_cast<size_t>(i) * 8 + j] = v;
  }
  const Tensor y = window_msa(x, p, 4, 4);
  for (int i = 1; i < 16; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(y[static_cast<size_t>(i) * 8 + j] ==
            doctest::Approx(y[static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("window_msa with one window, no shift, no bias equals global MSA") {
  WindowAttentionParams p = make_params(6, 2, 4, 0, 3);
  for (size_t i = 0; i < p.rel_pos_bias.numel(); ++i) p.rel_pos_bias[i] = 0.0;
  Rng rng(4);
  const Tensor x = random_tensor({16, 6}, rng, 0.7);
  const Tensor y = window_msa(x, p, 4, 4);

  // Global MSA oracle over all 16 tokens.
  std::vector<int> all(16);
  for (int i = 0; i < 16; ++i) all[static_cast<size_t>(i)] = i;
  const auto q = detail::project(x, all, p.w_q, p.b_q);
  const auto k = detail::project(x, all, p.w_k, p.b_k);
  const auto v = detail::project(x, all, p.w_v, p.b_v);
  const auto attn_out = detail::masked_mha(q, k, v, 16, 6, 2, nullptr, nullptr);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 6; ++j) {
      double acc = p.b_o[static_cast<size_t>(j)];
      for (int c = 0; c < 6; ++c)
        acc += attn_out[static_cast<size_t>(i) * 6 + c] * p.w_o[static_cast<size_t>(c) * 6 + j];
      CHECK(y[static_cast<size_t>(i) * 6 + j] == doctest::Approx(acc).epsilon(1e-9));
    }
}

TEST_CASE("window_msa matches the brute-force oracle, shift 0 and w/2") {
  Rng rng(5);
  for (const int shift : {0, 4}) {
    WindowAttentionParams p = make_params(12, 3, 8, shift, 100 + static_cast<uint64_t>(shift));
    const Tensor x = random_tensor({16 * 16, 12}, rng, 0.5);
    const Tensor got = window_msa(x, p, 16, 16);
    const Tensor want = window_msa_oracle(x, p, 16, 16);
    CHECK(max_abs_diff(got, want) < 1e-9);
  }
}

TEST_CASE("window_msa handles non-divisible sizes via reflective padding") {
  Rng rng(6);
  for (const int shift : {0, 3}) {
    WindowAttentionParams p = make_params(8, 2, 6, shift, 200 + static_cast<uint64_t>(shift));
    const int h = 10, w = 7;
    const Tensor x = random_tensor({h * w, 8}, rng, 0.5);
    const Tensor got = window_msa(x, p, h, w);
    CHECK(got.shape() == Shape{h * w, 8});
    const Tensor want = window_msa_oracle(x, p, h, w);
    CHECK(max_abs_diff(got, want) < 1e-9);
  }
}

TEST_CASE("window_msa rejects a token count that is not H*W") {
  WindowAttentionParams p = make_params(8, 2, 4, 0, 7);
  const Tensor x(Shape{15, 8});
  CHECK_THROWS_AS((void)window_msa(x, p, 4, 4), ContractError);
}

TEST_CASE("tdca: singleton dictionary yields unit attention") {
  Rng rng(8);
  TdcaParams p = TdcaParams::init(6, 3, rng);
  const Tensor x = random_tensor({5, 6}, rng);
  const Tensor dict = random_tensor({1, 6}, rng);
  const TdcaResult r = tdca(x, dict, p);
  CHECK(r.attn.shape() == Shape{5, 1});
  for (size_t i = 0; i < 5; ++i) CHECK(r.attn[i] == 1.0);
  // Output rows broadcast the single value token.
  const Tensor v = matmul(dict, p.w_v);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK(r.out[static_cast<size_t>(i) * 6 + j] == doctest::Approx(v[static_cast<size_t>(j)]));
}

TEST_CASE("tdca closed-form softmax weights for a 2-token dictionary") {
  // Arrange S = [1, 0] with tau = 1 by constructing exact projections.
  TdcaParams p;
  p.w_q = Tensor(Shape{2, 2}, {1, 0, 0, 1});
  p.w_k = Tensor(Shape{2, 2}, {1, 0, 0, 1});
  p.w_v = Tensor(Shape{2, 2}, {1, 0, 0, 1});
  p.tau = Tensor(Shape{1}, {1.0});
  const Tensor x(Shape{1, 2}, {1, 0});
  const Tensor dict(Shape{2, 2}, {1, 0, 0, 1});  // S = [1, 0]
  const TdcaResult r = tdca(x, dict, p);
  const double e = std::exp(1.0);
  const double w1 = e / (e + 1.0);
  CHECK(r.attn[0] == doctest::Approx(w1).epsilon(1e-5));
  CHECK(r.attn[1] == doctest::Approx(1.0 - w1).epsilon(1e-5));
  CHECK(r.attn[0] == doctest::Approx(0.73106).epsilon(1e-4));
  // out = w1 * v1 + (1 - w1) * v2 with identity W_v.
  CHECK(r.out[0] == doctest::Approx(w1).epsilon(1e-9));
  CHECK(r.out[1] == doctest::Approx(1.0 - w1).epsilon(1e-9));
}

TEST_CASE("tdca at the published widths produces an N x 128 attention map") {
  Rng rng(9);
  TdcaParams p = TdcaParams::init(210, 20, rng);
  const Tensor x = random_tensor({12, 210}, rng, 0.1);
  const Tensor dict = random_tensor({128, 210}, rng, 0.02);
  const TdcaResult r = tdca(x, dict, p);
  CHECK(r.attn.shape() == Shape{12, 128});
  CHECK(r.out.shape() == Shape{12, 210});
}

TEST_CASE("tdca attention rows are stochastic and positive") {
  Rng rng(10);
  TdcaParams p = TdcaParams::init(8, 4, rng);
  const Tensor x = random_tensor({20, 8}, rng);
  const Tensor dict = random_tensor({6, 8}, rng);
  const TdcaResult r = tdca(x, dict, p);
  for (int i = 0; i < 20; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) {
      const double a = r.attn[static_cast<size_t>(i) * 6 + j];
      CHECK(a > 0.0);
      s += a;
    }
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("tdca is invariant to positive rescaling of a query row") {
  Rng rng(11);
  TdcaParams p = TdcaParams::init(8, 4, rng);
  Tensor x = random_tensor({6, 8}, rng);
  const Tensor dict = random_tensor({5, 8}, rng);
  const TdcaResult base = tdca(x, dict, p);

  Tensor scaled = x.clone();
  for (int j = 0; j < 8; ++j) scaled[2 * 8 + j] *= 37.5;
  const TdcaResult after = tdca(scaled, dict, p);
  CHECK(max_abs_diff(base.attn, after.attn) < 1e-9);
  // Argmax of the rescaled row is unchanged.
  int b0 = 0, b1 = 0;
  for (int j = 1; j < 5; ++j) {
    if (base.attn[2 * 5 + j] > base.attn[2 * 5 + b0]) b0 = j;
    if (after.attn[2 * 5 + j] > after.attn[2 * 5 + b1]) b1 = j;
  }
  CHECK(b0 == b1);
}

TEST_CASE("tdca width mismatch raises a dimension error") {
  Rng rng(12);
  TdcaParams p = TdcaParams::init(8, 4, rng);
  const Tensor x(Shape{4, 8});
  const Tensor dict(Shape{3, 6});
  CHECK_THROWS_AS((void)tdca(x, dict, p), DimensionError);
}

TEST_CASE("tau clamp keeps the temperature in [0.01, 2]") {
  Rng rng(13);
  TdcaParams p = TdcaParams::init(4, 2, rng);
  p.tau[0] = 5.0;
  clamp_tau(p);
  CHECK(p.tau[0] == 2.0);
  p.tau[0] = 1e-9;
  clamp_tau(p);
  CHECK(p.tau[0] == 0.01);
}

TEST_CASE("tdca wall time scales linearly in the token count") {
  Rng rng(14);
  TdcaParams p = TdcaParams::init(64, 16, rng);
  const Tensor dict = random_tensor({32, 64}, rng);
  const Tensor x1 = random_tensor({4096, 64}, rng);
  const Tensor x2 = random_tensor({8192, 64}, rng);

  // Interleaved medians; the doubled size should cost about twice as much.
  auto once = [&](const Tensor& x) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)tdca(x, dict, p);
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
  };
  (void)once(x1);
  (void)once(x2);
  std::vector<double> t1s, t2s;
  for (int rep = 0; rep < 15; ++rep) {
    t1s.push_back(once(x1));
    t2s.push_back(once(x2));
  }
  std::sort(t1s.begin(), t1s.end());
  std::sort(t2s.begin(), t2s.end());
  const double ratio = t2s[t2s.size() / 2] / t1s[t1s.size() / 2];
  INFO("time ratio for 2x tokens: ", ratio);
  CHECK(ratio >= 1.6);
  CHECK(ratio <= 2.6);
}
