#include "atd/train.hpp"

#include <algorithm>
#include <cmath>

#include "atd/errors.hpp"
#include "atd/ops.hpp"

namespace atd {

void apply_schedule_defaults(TrainConfig& cfg) {
  if (cfg.warmup_iters < 0) throw ConfigError("train config: negative warmup");
  if (cfg.iters < 0) throw ConfigError("train config: negative iteration count");
  if (cfg.warmup_iters == 0) cfg.warmup_iters = cfg.iters / 20;
  if (cfg.lr_milestones.empty() && cfg.iters > 0) {
    for (double f : {0.6, 0.8, 0.9, 0.96}) {
      const int m = static_cast<int>(f * cfg.iters);
      if (m > 0 && m < cfg.iters &&
          (cfg.lr_milestones.empty() || m > cfg.lr_milestones.back())) {
        cfg.lr_milestones.push_back(m);
      }
    }
  }
  for (size_t i = 1; i < cfg.lr_milestones.size(); ++i) {
    if (cfg.lr_milestones[i] <= cfg.lr_milestones[i - 1]) {
      throw ConfigError("train config: milestones must be strictly increasing");
    }
  }
  if (!cfg.lr_milestones.empty() && cfg.lr_milestones.back() >= cfg.iters && cfg.iters > 0) {
    throw ConfigError("train config: milestones must lie before the final iteration");
  }
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ContractError("l1_loss: shapes differ: " + shape_str(pred.shape()) + " vs " +
                        shape_str(target.shape()));
  }
  return mean(abs(sub(pred, target)));
}

Tensor dihedral(const Tensor& chw, int code) {
  if (chw.ndim() != 3) throw ContractError("dihedral: expected [C x H x W]");
  if (code < 0 || code > 7) throw ContractError("dihedral: code must lie in [0, 7]");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const bool flip = (code & 4) != 0;
  const int rot = code & 3;
  const int oh = (rot % 2 == 0) ? h : w;
  const int ow = (rot % 2 == 0) ? w : h;
  Tensor out = Tensor::uninit(Shape{c, oh, ow});
  const double* src = chw.data();
  double* dst = out.data();
  for (int cc = 0; cc < c; ++cc) {
    const double* sp = src + static_cast<size_t>(cc) * h * w;
    double* dp = dst + static_cast<size_t>(cc) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        // Invert the rotation to find the source pixel, then the flip.
        int sy = 0, sx = 0;
        switch (rot) {
          case 0: sy = y; sx = x; break;
          case 1: sy = x; sx = w - 1 - y; break;          // 90 deg ccw... source of ccw out
          case 2: sy = h - 1 - y; sx = w - 1 - x; break;  // 180 deg
          case 3: sy = h - 1 - x; sx = y; break;          // 270 deg
        }
        if (flip) sx = w - 1 - sx;
        dp[static_cast<size_t>(y) * ow + x] = sp[static_cast<size_t>(sy) * w + sx];
      }
    }
  }
  return out;
}

int dihedral_inverse(int code) {
  if (code < 0 || code > 7) throw ContractError("dihedral_inverse: code must lie in [0, 7]");
  // Flip-then-rotate elements are involutions; pure rotations invert by 4-k.
  if (code & 4) return code;
  return (4 - (code & 3)) & 3;
}

Tensor crop_chw(const Tensor& t, int y0, int x0, int h, int w) {
  if (t.ndim() != 3) throw ContractError("crop_chw: expected [C x H x W]");
  const int c = t.dim(0), th = t.dim(1), tw = t.dim(2);
  if (y0 < 0 || x0 < 0 || y0 + h > th || x0 + w > tw) {
    throw ContractError("crop_chw: crop outside image bounds");
  }
  Tensor out = Tensor::uninit(Shape{c, h, w});
  const double* src = t.data();
  double* dst = out.data();
  for (int cc = 0; cc < c; ++cc)
    for (int y = 0; y < h; ++y) {
      const double* sp = src + (static_cast<size_t>(cc) * th + (y0 + y)) * tw + x0;
      std::copy(sp, sp + w, dst + (static_cast<size_t>(cc) * h + y) * w);
    }
  return out;
}

void adamw_step_tensor(const Tensor& param, const double* grad, std::vector<double>& m,
                       std::vector<double>& v, int64_t step, double lr, double beta1, double beta2,
                       double weight_decay, double eps) {
  if (eps <= 0.0) throw ContractError("adamw: eps must be positive");
  const size_t n = param.numel();
  if (m.size() != n) m.assign(n, 0.0);
  if (v.size() != n) v.assign(n, 0.0);
  double* p = param.data();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < n; ++i) {
    // Decoupled decay, independent of the adaptive update.
    if (weight_decay != 0.0) p[i] -= lr * weight_decay * p[i];
    const double g = grad ? grad[i] : 0.0;
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void adamw_step(const std::vector<std::pair<std::string, Tensor>>& registry, AdamWState& state,
                double lr, const TrainConfig& cfg) {
  if (state.m.size() != registry.size()) state.m.resize(registry.size());
  if (state.v.size() != registry.size()) state.v.resize(registry.size());
  state.step += 1;
  for (size_t i = 0; i < registry.size(); ++i) {
    const Tensor& p = registry[i].second;
    const double* g = p.grad_allocated() ? p.grad_const().data() : nullptr;
    adamw_step_tensor(p, g, state.m[i], state.v[i], state.step, lr, cfg.beta1, cfg.beta2,
                      cfg.weight_decay, cfg.adam_eps);
  }
}

double lr_schedule(int iter, const TrainConfig& cfg) {
  if (iter < 0) throw ContractError("lr_schedule: negative iteration");
  if (cfg.warmup_iters > 0 && iter < cfg.warmup_iters) {
    return cfg.lr * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
  }
  int halvings = 0;
  for (int ms : cfg.lr_milestones) {
    if (iter >= ms) ++halvings;
  }
  return cfg.lr * std::pow(0.5, halvings);
}

std::vector<SamplePair> sample_batch(const Dataset& dataset, const TrainConfig& cfg, Rng& rng) {
  if (dataset.items.empty()) throw DataError("sample_batch: dataset is empty");
  const int p = cfg.patch_lr;
  const int s = dataset.scale;
  std::vector<SamplePair> batch;
  batch.reserve(static_cast<size_t>(cfg.batch));
  for (int b = 0; b < cfg.batch; ++b) {
    const int id = rng.randint(0, static_cast<int>(dataset.items.size()));
    const DatasetEntry& e = dataset.items[static_cast<size_t>(id)];
    const int lh = e.lr.dim(1), lw = e.lr.dim(2);
    if (lh < p || lw < p) {
      throw DataError("sample_batch: image '" + e.name + "' smaller than the training patch");
    }
    const int y0 = lh == p ? 0 : rng.randint(0, lh - p + 1);
    const int x0 = lw == p ? 0 : rng.randint(0, lw - p + 1);
    const int aug = rng.randint(0, 8);
    SamplePair pair;
    pair.image_id = id;
    pair.x0 = x0;
    pair.y0 = y0;
    pair.aug = aug;
    pair.lr_patch = dihedral(crop_chw(e.lr, y0, x0, p, p), aug);
    pair.hr_patch = dihedral(crop_chw(e.hr, y0 * s, x0 * s, p * s, p * s), aug);
    batch.push_back(std::move(pair));
  }
  return batch;
}

namespace {

// Diagnostic for a NaN/Inf loss: name the first offending tensor.
std::string first_non_finite(const Model& model, double loss) {
  for (const auto& [name, t] : model.parameters()) {
    if (!t.all_finite()) return name;
  }
  (void)loss;
  return "loss";
}

}  // namespace

TrainResult train_loop(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                       AdamWState& state, const CheckpointCallback& checkpoint_cb) {
  TrainResult result;
  if (cfg.iters == 0) return result;
  if (cfg.batch < 1) throw ConfigError("train config: batch must be at least 1");

  Rng sampler(mix_seed(cfg.seed, 0x5a3c9d));
  const auto& registry = model.parameters();

  for (int it = 0; it < cfg.iters; ++it) {
    const double lr_t = lr_schedule(it, cfg);
    std::vector<SamplePair> batch = sample_batch(dataset, cfg, sampler);

    for (const auto& [name, t] : registry) t.zero_grad();
    double loss_acc = 0.0;
    for (size_t si = 0; si < batch.size(); ++si) {
      GradTape tape;
      TapeScope scope(tape);
      const uint64_t step_seed =
          mix_seed(cfg.seed, static_cast<uint64_t>(it) * static_cast<uint64_t>(cfg.batch) + si);
      Tensor pred = model.forward(batch[si].lr_patch, Mode::train, step_seed);
      Tensor loss = l1_loss(pred, batch[si].hr_patch);
      loss_acc += loss.item();
      // Mean over the batch: scale each sample's contribution.
      tape.backward(scale(loss, 1.0 / cfg.batch));
    }
    const double mean_loss = loss_acc / cfg.batch;
    if (!std::isfinite(mean_loss)) {
      throw DataError("train_loop: non-finite loss at iteration " + std::to_string(it) +
                      " (first non-finite tensor: " + first_non_finite(model, mean_loss) + ")");
    }

    adamw_step(registry, state, lr_t, cfg);
    clamp_temperatures(model);

    result.curve.push_back(TrainLogEntry{it, mean_loss, lr_t});
    if (checkpoint_cb && cfg.ckpt_every > 0 && (it + 1) % cfg.ckpt_every == 0 &&
        it + 1 < cfg.iters) {
      checkpoint_cb(it + 1, sampler);
    }
  }
  if (checkpoint_cb) checkpoint_cb(cfg.iters, sampler);
  return result;
}

}  // namespace atd
