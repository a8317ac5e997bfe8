#pragma once

#include <cstdint>
#include <string>

#include "atd/train.hpp"

namespace atd {

// Command implementations behind the CLI. All of them throw atd errors on
// failure; the CLI turns those into exit codes and messages.

struct TrainOptions {
  std::string data_dir;
  std::string out_dir = "out";
  std::string preset = "atd_tiny";
  TrainConfig train;  // scale/seed/iters/batch/... ; schedule defaults applied here
};

// Builds LR/HR pairs by bicubic downscaling every PNG in data_dir, trains,
// and writes loss.csv plus checkpoints under out_dir.
void cmd_train(const TrainOptions& opts);

struct InferOptions {
  std::string checkpoint;
  std::string input;
  std::string output;
};

// Upscales one PNG; output dimensions are scale x input, 8-bit RGB.
void cmd_infer(const InferOptions& opts);

struct EvalOptions {
  std::string checkpoint;
  std::string hr_dir;
  std::string out_csv = "eval.csv";
  int scale = 0;  // 0: take from the checkpoint; otherwise must match
};

// Scores the model and the bicubic baseline against every HR PNG:
// CSV columns image, psnr, ssim, baseline_psnr, baseline_ssim
// (Y channel, border crop = scale). Honors ATD_NUM_THREADS for per-image
// parallelism; output order is always the sorted file order.
void cmd_eval(const EvalOptions& opts);

struct ParamsOptions {
  std::string preset = "atd_tiny";
  int scale = 2;
};

// Prints the exact learnable-parameter count, with the +-10% reference
// comparison for the published configurations.
void cmd_params(const ParamsOptions& opts);

struct VizOptions {
  std::string checkpoint;
  std::string input;
  std::string out_dir = "masks";
  int block = 0;
  int layer = 0;
};

// Writes one binarized PNG mask per dictionary token showing the category
// assignment of the chosen block/layer; masks partition the pixel grid.
void cmd_viz_categories(const VizOptions& opts);

// Worker-thread cap from ATD_NUM_THREADS (default 1).
int worker_threads();

// Loads a directory of PNGs as a training/eval dataset: crops each image to
// a multiple of scale and pairs it with its bicubic downscale. Unreadable
// or undersized files are reported to stderr and skipped; an empty result
// raises DataError.
Dataset load_dataset(const std::string& dir, int scale, int min_lr_side);

}  // namespace atd
