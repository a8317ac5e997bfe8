// Command-line front end: train / infer / eval / params / viz-categories.
// Precedence for every setting: CLI flag > config file > built-in default.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "atd/commands.hpp"
#include "atd/errors.hpp"
#include "atd/run_config.hpp"

namespace {

std::vector<int> parse_milestones(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// Applies a config-file value unless the CLI already set the option.
template <class T, class Getter>
void merge(const CLI::Option* opt, const atd::RunConfig& cfg, const std::string& key, T& target,
           Getter getter) {
  if (opt != nullptr && opt->count() > 0) return;  // CLI wins
  if (cfg.has(key)) target = getter(key);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Tensor buffers churn fast; keep them on the heap free lists instead of
  // per-allocation mmap/munmap cycles.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"adaptive token dictionary super-resolution"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "train a model on a directory of PNG images");
  atd::TrainOptions topt;
  std::string t_config;
  std::string t_milestones;
  auto* t_data = train->add_option("--data", topt.data_dir, "directory of HR PNG images");
  auto* t_out = train->add_option("--out", topt.out_dir, "output directory");
  auto* t_preset = train->add_option("--preset", topt.preset, "atd | atd_light | atd_tiny");
  auto* t_scale = train->add_option("--scale", topt.train.scale, "upscaling factor (2, 3, 4)");
  auto* t_iters = train->add_option("--iters", topt.train.iters, "training iterations");
  auto* t_seed = train->add_option("--seed", topt.train.seed, "run seed");
  auto* t_batch = train->add_option("--batch", topt.train.batch, "batch size");
  auto* t_lr = train->add_option("--lr", topt.train.lr, "initial learning rate");
  auto* t_patch = train->add_option("--patch", topt.train.patch_lr, "LR training patch size");
  auto* t_warm = train->add_option("--warmup", topt.train.warmup_iters, "warm-up iterations");
  auto* t_wd = train->add_option("--weight-decay", topt.train.weight_decay, "decoupled weight decay");
  auto* t_ck = train->add_option("--ckpt-every", topt.train.ckpt_every, "checkpoint interval");
  auto* t_ms = train->add_option("--milestones", t_milestones, "comma-separated LR halving iterations");
  train->add_option("--config", t_config, "key=value config file");

  // ---- infer ----
  auto* infer = app.add_subcommand("infer", "upscale one PNG image");
  atd::InferOptions iopt;
  infer->add_option("checkpoint", iopt.checkpoint, "model checkpoint")->required();
  infer->add_option("input", iopt.input, "input PNG")->required();
  infer->add_option("output", iopt.output, "output PNG")->required();

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "score PSNR/SSIM against HR images");
  atd::EvalOptions eopt;
  eval->add_option("checkpoint", eopt.checkpoint, "model checkpoint")->required();
  eval->add_option("hr_dir", eopt.hr_dir, "directory of HR PNG images")->required();
  eval->add_option("--scale", eopt.scale, "expected scale (must match checkpoint)");
  eval->add_option("--out", eopt.out_csv, "report CSV path");

  // ---- params ----
  auto* params = app.add_subcommand("params", "print the learnable-parameter count of a preset");
  atd::ParamsOptions popt;
  params->add_option("--preset", popt.preset, "atd | atd_light | atd_tiny");
  params->add_option("--scale", popt.scale, "upscaling factor (2, 3, 4)");

  // ---- viz-categories ----
  auto* viz = app.add_subcommand("viz-categories", "export per-token category masks");
  atd::VizOptions vopt;
  viz->add_option("checkpoint", vopt.checkpoint, "model checkpoint")->required();
  viz->add_option("input", vopt.input, "input PNG")->required();
  viz->add_option("--block", vopt.block, "block index (0-based)");
  viz->add_option("--layer", vopt.layer, "layer index within the block (0-based)");
  viz->add_option("--out", vopt.out_dir, "mask output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      if (!t_config.empty()) {
        const atd::RunConfig cfg = atd::RunConfig::load(t_config);
        cfg.require_known({"data", "out", "preset", "scale", "iters", "seed", "batch", "lr",
                           "patch", "warmup", "weight_decay", "ckpt_every", "milestones"});
        merge(t_data, cfg, "data", topt.data_dir, [&](const std::string& k) { return cfg.get(k); });
        merge(t_out, cfg, "out", topt.out_dir, [&](const std::string& k) { return cfg.get(k); });
        merge(t_preset, cfg, "preset", topt.preset,
              [&](const std::string& k) { return cfg.get(k); });
        merge(t_scale, cfg, "scale", topt.train.scale,
              [&](const std::string& k) { return static_cast<int>(cfg.get_int(k)); });
        merge(t_iters, cfg, "iters", topt.train.iters,
              [&](const std::string& k) { return static_cast<int>(cfg.get_int(k)); });
        merge(t_seed, cfg, "seed", topt.train.seed,
              [&](const std::string& k) { return static_cast<uint64_t>(cfg.get_int(k)); });
        merge(t_batch, cfg, "batch", topt.train.batch,
              [&](const std::string& k) { return static_cast<int>(cfg.get_int(k)); });
        merge(t_lr, cfg, "lr", topt.train.lr,
              [&](const std::string& k) { return cfg.get_double(k); });
        merge(t_patch, cfg, "patch", topt.train.patch_lr,
              [&](const std::string& k) { return static_cast<int>(cfg.get_int(k)); });
        merge(t_warm, cfg, "warmup", topt.train.warmup_iters,
              [&](const std::string& k) { return static_cast<int>(cfg.get_int(k)); });
        merge(t_wd, cfg, "weight_decay", topt.train.weight_decay,
              [&](const std::string& k) { return cfg.get_double(k); });
        merge(t_ck, cfg, "ckpt_every", topt.train.ckpt_every,
              [&](const std::string& k) { return static_cast<int>(cfg.get_int(k)); });
        merge(t_ms, cfg, "milestones", t_milestones,
              [&](const std::string& k) { return cfg.get(k); });
      }
      if (topt.data_dir.empty()) throw atd::ConfigError("train: --data is required");
      if (!t_milestones.empty()) topt.train.lr_milestones = parse_milestones(t_milestones);
      atd::cmd_train(topt);
    } else if (infer->parsed()) {
      atd::cmd_infer(iopt);
    } else if (eval->parsed()) {
      atd::cmd_eval(eopt);
    } else if (params->parsed()) {
      atd::cmd_params(popt);
    } else if (viz->parsed()) {
      atd::cmd_viz_categories(vopt);
    }
  } catch (const atd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
