#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "atd/model.hpp"
#include "atd/rng.hpp"
#include "atd/tensor.hpp"

namespace atd {

struct TrainConfig {
  int batch = 8;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.9;  // as published; unusual but intentional
  double weight_decay = 0.0;
  double adam_eps = 1e-8;
  int iters = 2000;
  std::vector<int> lr_milestones;  // strictly increasing, < iters
  int warmup_iters = 0;
  int patch_lr = 32;
  int scale = 2;
  uint64_t seed = 0;
  int ckpt_every = 0;  // 0: checkpoint only at the end
};

// Fills warmup (iters/20) and the milestone fractions 0.6/0.8/0.9/0.96 of
// the run length when left unset, mirroring the published step schedule
// proportionally.
void apply_schedule_defaults(TrainConfig& cfg);

struct SamplePair {
  Tensor lr_patch;  // [3 x p x p]
  Tensor hr_patch;  // [3 x sp x sp]
  int image_id = 0;
  int x0 = 0, y0 = 0;  // LR crop offset
  int aug = 0;         // dihedral code 0..7
};

struct DatasetEntry {
  Tensor hr;  // [3 x H x W], H and W divisible by scale
  Tensor lr;  // bicubic-downscaled counterpart
  std::string name;
};

struct Dataset {
  std::vector<DatasetEntry> items;
  int scale = 2;
};

// Mean absolute difference over all elements.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// Dihedral-group action on a [C x H x W] tensor: bit 2 flips horizontally,
// bits 0..1 rotate by 90-degree steps (flip first, then rotate).
Tensor dihedral(const Tensor& chw, int code);
int dihedral_inverse(int code);

// Crop helper on [C x H x W] data (no gradient tracking).
Tensor crop_chw(const Tensor& t, int y0, int x0, int h, int w);

struct AdamWState {
  std::vector<std::vector<double>> m, v;  // aligned with the parameter registry
  int64_t step = 0;
};

// One decoupled-weight-decay Adam step for a single parameter. Weight decay
// multiplies the parameter directly; the adaptive update uses
// bias-corrected moments.
void adamw_step_tensor(const Tensor& param, const double* grad, std::vector<double>& m,
                       std::vector<double>& v, int64_t step, double lr, double beta1, double beta2,
                       double weight_decay, double eps);

// Steps every registry parameter; missing gradients count as zero.
void adamw_step(const std::vector<std::pair<std::string, Tensor>>& registry, AdamWState& state,
                double lr, const TrainConfig& cfg);

// Linear warm-up from zero, then halving at each passed milestone.
double lr_schedule(int iter, const TrainConfig& cfg);

// One batch of aligned random crops with a shared dihedral augmentation per
// pair. Deterministic under the rng stream.
std::vector<SamplePair> sample_batch(const Dataset& dataset, const TrainConfig& cfg, Rng& rng);

struct TrainLogEntry {
  int iter = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> curve;
};

// Desk-scale training loop: per-sample forward/backward with gradient
// accumulation, AdamW step, temperature clamping, and a checkpoint callback
// at the configured interval and at the end (the callback receives the
// sampler so its state can be serialized). Aborts with a DataError naming
// the first non-finite tensor if the loss stops being finite.
using CheckpointCallback = std::function<void(int iter, const Rng& sampler)>;
TrainResult train_loop(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                       AdamWState& state, const CheckpointCallback& checkpoint_cb = nullptr);

}  // namespace atd
