#include <doctest.h>

#include <cmath>

#include "atd/errors.hpp"
#include "atd/metrics.hpp"
#include "atd/train.hpp"
#include "support/test_util.hpp"
#include "support/toy_data.hpp"

using namespace atd;
using namespace atdtest;

TEST_CASE("l1_loss hand cases") {
  Rng rng(1);
  const Tensor a = random_tensor({3, 4}, rng);
  CHECK(l1_loss(a, a).item() == 0.0);

  Tensor b = a.clone();
  for (size_t i = 0; i < b.numel(); ++i) b[i] += 0.5;
  CHECK(l1_loss(b, a).item() == doctest::Approx(0.5).epsilon(1e-12));

  const Tensor p(Shape{2}, {0, 1});
  const Tensor t(Shape{2}, {1, 1});
  CHECK(l1_loss(p, t).item() == doctest::Approx(0.5).epsilon(1e-12));

  const Tensor wrong(Shape{3});
  CHECK_THROWS_AS((void)l1_loss(p, wrong), ContractError);
}

TEST_CASE("adamw: zero gradient and zero decay step is the identity") {
  Tensor p(Shape{4}, {1, -2, 3, -4});
  const Tensor before = p.clone();
  std::vector<double> m, v;
  std::vector<double> zeros(4, 0.0);
  adamw_step_tensor(p, zeros.data(), m, v, 1, 0.1, 0.9, 0.9, 0.0, 1e-8);
  CHECK(bit_equal(p, before));
}

TEST_CASE("adamw: first step moves by roughly lr in the gradient direction") {
  Tensor p(Shape{3}, {0.0, 0.0, 0.0});
  std::vector<double> g{0.5, -1.25, 2.0};
  std::vector<double> m, v;
  const double lr = 1e-3;
  adamw_step_tensor(p, g.data(), m, v, 1, lr, 0.9, 0.9, 0.0, 1e-8);
  for (int i = 0; i < 3; ++i) {
    const double sign = g[static_cast<size_t>(i)] > 0 ? 1.0 : -1.0;
    CHECK(p[static_cast<size_t>(i)] == doctest::Approx(-lr * sign).epsilon(1e-6));
  }
}

TEST_CASE("adamw: decay-only step scales parameters by 1 - lr*wd") {
  Tensor p(Shape{2}, {2.0, -4.0});
  std::vector<double> zeros(2, 0.0);
  std::vector<double> m, v;
  adamw_step_tensor(p, zeros.data(), m, v, 1, 1.0, 0.9, 0.9, 0.01, 1e-8);
  CHECK(p[0] == doctest::Approx(2.0 * 0.99).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-4.0 * 0.99).epsilon(1e-12));
}

TEST_CASE("lr_schedule warm-up and halving") {
  TrainConfig cfg;
  cfg.lr = 2e-4;
  cfg.iters = 1000;
  cfg.warmup_iters = 10;
  cfg.lr_milestones = {600, 800, 900, 960};

  CHECK(lr_schedule(0, cfg) == 0.0);
  CHECK(lr_schedule(10, cfg) == cfg.lr);
  CHECK(lr_schedule(5, cfg) == doctest::Approx(cfg.lr * 0.5));
  CHECK(lr_schedule(850, cfg) == doctest::Approx(5e-5));  // past two milestones

  // Non-increasing after warm-up, piecewise constant between milestones.
  double prev = lr_schedule(cfg.warmup_iters, cfg);
  for (int it = cfg.warmup_iters + 1; it < cfg.iters; ++it) {
    const double cur = lr_schedule(it, cfg);
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK(lr_schedule(700, cfg) == lr_schedule(799, cfg));
}

TEST_CASE("schedule defaults mirror the published fractions") {
  TrainConfig cfg;
  cfg.iters = 1000;
  cfg.warmup_iters = 0;
  cfg.lr_milestones.clear();
  apply_schedule_defaults(cfg);
  CHECK(cfg.warmup_iters == 50);
  CHECK(cfg.lr_milestones == std::vector<int>{600, 800, 900, 960});

  TrainConfig bad;
  bad.iters = 100;
  bad.lr_milestones = {50, 50};
  CHECK_THROWS_AS(apply_schedule_defaults(bad), ConfigError);
}

TEST_CASE("dihedral codes form the 8-element group with exact inverses") {
  Rng rng(2);
  const Tensor x = random_tensor({3, 5, 7}, rng);
  CHECK(bit_equal(dihedral(x, 0), x));
  for (int code = 0; code < 8; ++code) {
    const Tensor there = dihedral(x, code);
    const Tensor back = dihedral(there, dihedral_inverse(code));
    CHECK(bit_equal(back, x));
  }
  // All 8 actions are distinct on a generic image.
  for (int a = 0; a < 8; ++a)
    for (int b = a + 1; b < 8; ++b) {
      const Tensor ta = dihedral(x, a);
      const Tensor tb = dihedral(x, b);
      bool same_shape = ta.shape() == tb.shape();
      CHECK((!same_shape || !bit_equal(ta, tb)));
    }
}

namespace {

Dataset toy_dataset(int images, int hw, int scale, uint64_t seed) {
  Dataset ds;
  ds.scale = scale;
  for (int i = 0; i < images; ++i) {
    DatasetEntry e;
    e.hr = toy_image(seed + static_cast<uint64_t>(i), hw, hw);
    e.lr = bicubic_downscale(e.hr, scale);
    e.name = "toy" + std::to_string(i);
    ds.items.push_back(std::move(e));
  }
  return ds;
}

}  // namespace

TEST_CASE("sample_batch is deterministic and aligns LR/HR crops") {
  const Dataset ds = toy_dataset(6, 48, 2, 900);
  TrainConfig cfg;
  cfg.batch = 5;
  cfg.patch_lr = 16;
  cfg.scale = 2;

  Rng r1(33), r2(33);
  const auto b1 = sample_batch(ds, cfg, r1);
  const auto b2 = sample_batch(ds, cfg, r2);
  for (int i = 0; i < cfg.batch; ++i) {
    CHECK(b1[static_cast<size_t>(i)].image_id == b2[static_cast<size_t>(i)].image_id);
    CHECK(b1[static_cast<size_t>(i)].aug == b2[static_cast<size_t>(i)].aug);
    CHECK(bit_equal(b1[static_cast<size_t>(i)].lr_patch, b2[static_cast<size_t>(i)].lr_patch));
    CHECK(bit_equal(b1[static_cast<size_t>(i)].hr_patch, b2[static_cast<size_t>(i)].hr_patch));
  }

  for (const auto& pair : b1) {
    CHECK(pair.lr_patch.shape() == Shape{3, 16, 16});
    CHECK(pair.hr_patch.shape() == Shape{3, 32, 32});
    // Undo the augmentation; the HR crop must equal the crop taken at the
    // scaled coordinates.
    const Tensor hr_plain = dihedral(pair.hr_patch, dihedral_inverse(pair.aug));
    const DatasetEntry& e = ds.items[static_cast<size_t>(pair.image_id)];
    const Tensor expect = crop_chw(e.hr, pair.y0 * 2, pair.x0 * 2, 32, 32);
    CHECK(bit_equal(hr_plain, expect));
  }
}

TEST_CASE("augmentation code zero is the plain crop") {
  const Dataset ds = toy_dataset(1, 32, 2, 901);
  TrainConfig cfg;
  cfg.batch = 16;
  cfg.patch_lr = 8;
  cfg.scale = 2;
  Rng rng(5);
  const auto batch = sample_batch(ds, cfg, rng);
  bool saw_plain = false;
  for (const auto& pair : batch) {
    if (pair.aug != 0) continue;
    saw_plain = true;
    const Tensor expect = crop_chw(ds.items[0].lr, pair.y0, pair.x0, 8, 8);
    CHECK(bit_equal(pair.lr_patch, expect));
  }
  CHECK(saw_plain);
}

TEST_CASE("LR patches correlate with bicubic-downscaled HR patches") {
  const Dataset ds = toy_dataset(4, 64, 2, 902);
  TrainConfig cfg;
  cfg.batch = 8;
  cfg.patch_lr = 16;
  cfg.scale = 2;
  Rng rng(6);
  for (const auto& pair : sample_batch(ds, cfg, rng)) {
    const Tensor down = bicubic_downscale(pair.hr_patch, 2);
    // Pearson correlation between the downscaled HR crop and the LR crop.
    double ma = 0, mb = 0;
    const size_t n = down.numel();
    for (size_t i = 0; i < n; ++i) {
      ma += down[i];
      mb += pair.lr_patch[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cab = 0, ca = 0, cb = 0;
    for (size_t i = 0; i < n; ++i) {
      cab += (down[i] - ma) * (pair.lr_patch[i] - mb);
      ca += (down[i] - ma) * (down[i] - ma);
      cb += (pair.lr_patch[i] - mb) * (pair.lr_patch[i] - mb);
    }
    CHECK(cab / std::sqrt(ca * cb) > 0.99);
  }
}

TEST_CASE("train_loop with zero iterations changes nothing") {
  Model model = Model::init(preset("atd_tiny", 2), 44);
  std::vector<Tensor> before;
  for (const auto& [name, t] : model.parameters()) before.push_back(t.clone());
  const Dataset ds = toy_dataset(2, 32, 2, 903);
  TrainConfig cfg;
  cfg.iters = 0;
  cfg.scale = 2;
  cfg.patch_lr = 16;
  AdamWState state;
  const TrainResult r = train_loop(model, ds, cfg, state);
  CHECK(r.curve.empty());
  size_t i = 0;
  for (const auto& [name, t] : model.parameters()) CHECK(bit_equal(t, before[i++]));
}

TEST_CASE("short training run reduces the loss and is bit-reproducible") {
  const Dataset ds = toy_dataset(8, 32, 2, 904);
  TrainConfig cfg;
  cfg.iters = 60;
  cfg.batch = 2;
  cfg.patch_lr = 16;
  cfg.scale = 2;
  cfg.lr = 2e-3;
  cfg.seed = 7;
  apply_schedule_defaults(cfg);

  Model m1 = Model::init(preset("atd_tiny", 2), cfg.seed);
  AdamWState s1;
  const TrainResult r1 = train_loop(m1, ds, cfg, s1);
  REQUIRE(static_cast<int>(r1.curve.size()) == cfg.iters);

  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += r1.curve[static_cast<size_t>(i)].loss / 10.0;
    last += r1.curve[r1.curve.size() - 10 + static_cast<size_t>(i)].loss / 10.0;
  }
  INFO("smoothed loss ", first, " -> ", last);
  CHECK(last < first);

  Model m2 = Model::init(preset("atd_tiny", 2), cfg.seed);
  AdamWState s2;
  const TrainResult r2 = train_loop(m2, ds, cfg, s2);
  for (size_t i = 0; i < r1.curve.size(); ++i) CHECK(r1.curve[i].loss == r2.curve[i].loss);
  auto it2 = m2.parameters().begin();
  for (const auto& [name, t] : m1.parameters()) {
    CHECK(bit_equal(t, it2->second));
    ++it2;
  }
}

TEST_CASE("train_loop aborts naming the first non-finite tensor") {
  const Dataset ds = toy_dataset(2, 32, 2, 905);
  TrainConfig cfg;
  cfg.iters = 5;
  cfg.batch = 1;
  cfg.patch_lr = 16;
  cfg.scale = 2;
  cfg.seed = 3;
  Model model = Model::init(preset("atd_tiny", 2), 3);
  // Poison one parameter; the forward pass propagates it into the loss.
  model.blocks()[0].conv_w[0] = std::nan("");
  AdamWState state;
  try {
    (void)train_loop(model, ds, cfg, state);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("blocks.0.conv.w") != std::string::npos);
  }
}
