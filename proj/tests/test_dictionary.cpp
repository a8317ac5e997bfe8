#include <doctest.h>

#include <cmath>

#include "atd/attention.hpp"
#include "atd/dictionary.hpp"
#include "atd/errors.hpp"
#include "atd/ops.hpp"
#include "support/test_util.hpp"

using namespace atd;
using namespace atdtest;

TEST_CASE("init_dictionary shapes, determinism, and scale") {
  const TokenDictionary full = init_dictionary(128, 210, 42);
  CHECK(full.tokens.shape() == Shape{128, 210});
  CHECK(full.layer_index == 1);
  CHECK_FALSE(full.per_sample);

  const TokenDictionary light = init_dictionary(64, 48, 42);
  CHECK(light.tokens.shape() == Shape{64, 48});

  const TokenDictionary again = init_dictionary(128, 210, 42);
  CHECK(bit_equal(full.tokens, again.tokens));

  // N(0, 0.02^2): sample stddev close to 0.02 over 26880 draws.
  double ss = 0.0;
  for (size_t i = 0; i < full.tokens.numel(); ++i) ss += full.tokens[i] * full.tokens[i];
  const double stddev = std::sqrt(ss / static_cast<double>(full.tokens.numel()));
  CHECK(stddev > 0.015);
  CHECK(stddev < 0.025);

  CHECK_THROWS_AS((void)init_dictionary(0, 4, 1), ContractError);
}

namespace {

AdrParams adr_with_sigma_raw(double raw) {
  AdrParams p = AdrParams::init();
  p.sigma_raw[0] = raw;
  return p;
}

}  // namespace

TEST_CASE("refine at the sigma endpoints") {
  Rng rng(7);
  const TokenDictionary dict{random_tensor({3, 5}, rng), 1, false};
  const Tensor attn = softmax(random_tensor({6, 3}, rng));
  const Tensor x_next = random_tensor({6, 5}, rng);

  // sigmoid(-1000) is exactly 0: the refined tokens equal the old ones.
  const TokenDictionary frozen = refine(dict, attn, x_next, adr_with_sigma_raw(-1000.0));
  CHECK(bit_equal(frozen.tokens, dict.tokens));
  CHECK(frozen.layer_index == 2);
  CHECK(frozen.per_sample);

  // sigmoid(+1000) is exactly 1 and N == 1: every token becomes the single
  // x_next row (softmax over one element is 1).
  const TokenDictionary d1{random_tensor({4, 5}, rng), 1, false};
  const Tensor attn1 = softmax(random_tensor({1, 4}, rng));
  const Tensor row = random_tensor({1, 5}, rng);
  const TokenDictionary replaced = refine(d1, attn1, row, adr_with_sigma_raw(1000.0));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(replaced.tokens[static_cast<size_t>(i) * 5 + j] == row[static_cast<size_t>(j)]);
}

TEST_CASE("refine matches a direct matrix-arithmetic evaluation") {
  // sigma = 0.5 via raw 0; M = 2 tokens, N = 2 rows, hand-sized inputs.
  const TokenDictionary dict{Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6}), 1, false};
  const Tensor attn(Shape{2, 2}, {0.75, 0.25, 0.4, 0.6});
  const Tensor x_next(Shape{2, 3}, {0.5, -0.5, 1.0, 2.0, 0.0, -1.0});
  const AdrParams adr = adr_with_sigma_raw(0.0);

  const TokenDictionary got = refine(dict, attn, x_next, adr);

  // Independent evaluation: standardize rows of attn^T, softmax, matmul,
  // blend with sigma = 0.5.
  double at[2][2] = {{0.75, 0.4}, {0.25, 0.6}};
  double expect[2][3];
  for (int i = 0; i < 2; ++i) {
    const double mu = (at[i][0] + at[i][1]) / 2.0;
    const double var = ((at[i][0] - mu) * (at[i][0] - mu) + (at[i][1] - mu) * (at[i][1] - mu)) / 2.0;
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    double z0 = (at[i][0] - mu) * inv, z1 = (at[i][1] - mu) * inv;
    const double mx = std::max(z0, z1);
    const double e0 = std::exp(z0 - mx), e1 = std::exp(z1 - mx);
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    for (int c = 0; c < 3; ++c) {
      const double dhat = w0 * x_next[static_cast<size_t>(c)] + w1 * x_next[3 + static_cast<size_t>(c)];
      expect[i][c] = 0.5 * dhat + 0.5 * dict.tokens[static_cast<size_t>(i) * 3 + c];
    }
  }
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(got.tokens[static_cast<size_t>(i) * 3 + c] == doctest::Approx(expect[i][c]).epsilon(1e-12));
}

TEST_CASE("refined tokens stay between the candidate and the previous tokens") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = 2 + rng.randint(0, 5), n = 2 + rng.randint(0, 9), d = 2 + rng.randint(0, 6);
    const TokenDictionary dict{random_tensor({m, d}, rng), 1, false};
    const Tensor attn = softmax(random_tensor({n, m}, rng));
    const Tensor x_next = random_tensor({n, d}, rng);
    const AdrParams adr = adr_with_sigma_raw(rng.uniform(-2.0, 2.0));

    // Candidate with sigma = 1 exactly.
    const Tensor candidate = refine(dict, attn, x_next, adr_with_sigma_raw(1000.0)).tokens;
    const Tensor blended = refine(dict, attn, x_next, adr).tokens;
    for (size_t i = 0; i < blended.numel(); ++i) {
      const double lo = std::min(candidate[i], dict.tokens[i]);
      const double hi = std::max(candidate[i], dict.tokens[i]);
      CHECK(blended[i] >= lo - 1e-12);
      CHECK(blended[i] <= hi + 1e-12);
    }

    // Convex hull over x_next rows, per channel.
    for (int i = 0; i < m; ++i)
      for (int c = 0; c < d; ++c) {
        double lo = 1e300, hi = -1e300;
        for (int r = 0; r < n; ++r) {
          lo = std::min(lo, x_next[static_cast<size_t>(r) * d + c]);
          hi = std::max(hi, x_next[static_cast<size_t>(r) * d + c]);
        }
        const double v = candidate[static_cast<size_t>(i) * d + c];
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
      }
  }
}

TEST_CASE("refinement of one sample never reads another sample's features") {
  Rng rng(10);
  const TokenDictionary dict{random_tensor({3, 4}, rng), 1, false};
  const AdrParams adr = AdrParams::init();
  const Tensor attn_a = softmax(random_tensor({5, 3}, rng));
  const Tensor x_a = random_tensor({5, 4}, rng);
  const TokenDictionary before = refine(dict, attn_a, x_a, adr);

  // Refine a second, perturbed sample; sample A's result must be unchanged.
  Tensor x_b = random_tensor({5, 4}, rng);
  const Tensor attn_b = softmax(random_tensor({5, 3}, rng));
  (void)refine(dict, attn_b, x_b, adr);
  const TokenDictionary after = refine(dict, attn_a, x_a, adr);
  CHECK(bit_equal(before.tokens, after.tokens));
}

TEST_CASE("gradient reaches the layer-1 dictionary through a refinement chain") {
  Rng rng(11);
  TdcaParams tp = TdcaParams::init(6, 3, rng);
  const AdrParams adr = AdrParams::init();
  TokenDictionary dict = init_dictionary(4, 6, 123);
  const Tensor x = random_tensor({7, 6}, rng);

  GradTape tape;
  {
    TapeScope scope(tape);
    TokenDictionary cur = dict;
    Tensor h = x;
    for (int layer = 0; layer < 3; ++layer) {
      const TdcaResult r = tdca(h, cur.tokens, tp);
      h = add(h, r.out);
      cur = refine(cur, r.attn, h, adr);
    }
    CHECK(cur.layer_index == 4);
    tape.backward(mean(h));
  }
  CHECK(dict.tokens.grad_allocated());
  double norm = 0.0;
  for (double g : dict.tokens.grad_const()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("refine validates row counts") {
  Rng rng(12);
  const TokenDictionary dict{random_tensor({3, 4}, rng), 1, false};
  const AdrParams adr = AdrParams::init();
  const Tensor attn = softmax(random_tensor({5, 3}, rng));
  const Tensor bad_rows = random_tensor({6, 4}, rng);
  CHECK_THROWS_AS((void)refine(dict, attn, bad_rows, adr), DimensionError);
  const Tensor bad_cols = random_tensor({5, 9}, rng);
  CHECK_THROWS_AS((void)refine(dict, attn, bad_cols, adr), DimensionError);
}
