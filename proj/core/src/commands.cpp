#include "atd/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "atd/checkpoint.hpp"
#include "atd/errors.hpp"
#include "atd/image.hpp"
#include "atd/metrics.hpp"
#include "atd/ops.hpp"

namespace fs = std::filesystem;

namespace atd {

int worker_threads() {
  const char* env = std::getenv("ATD_NUM_THREADS");
  if (env == nullptr) return 1;
  const int v = std::atoi(env);
  return v < 1 ? 1 : v;
}

namespace {

std::vector<std::string> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor infer_sr(const Model& model, const Tensor& lr) {
  // Inference clamps to the displayable range; training never does.
  return clamp01(model.forward(lr, Mode::eval, 0));
}

}  // namespace

Dataset load_dataset(const std::string& dir, int scale, int min_lr_side) {
  Dataset ds;
  ds.scale = scale;
  for (const std::string& path : list_pngs(dir)) {
    ImageU8 img;
    try {
      img = load_png(path);
    } catch (const Error& e) {
      std::cerr << "warning: skipping '" << path << "': " << e.what() << "\n";
      continue;
    }
    const int h = (img.height / scale) * scale;
    const int w = (img.width / scale) * scale;
    if (h / scale < min_lr_side || w / scale < min_lr_side) {
      std::cerr << "warning: skipping undersized image '" << path << "' (" << img.width << "x"
                << img.height << ")\n";
      continue;
    }
    DatasetEntry entry;
    entry.name = fs::path(path).filename().string();
    entry.hr = crop_chw(image_to_tensor(img), 0, 0, h, w);
    entry.lr = bicubic_downscale(entry.hr, scale);
    ds.items.push_back(std::move(entry));
  }
  if (ds.items.empty()) throw DataError("no usable images in '" + dir + "'");
  return ds;
}

void cmd_train(const TrainOptions& opts) {
  TrainConfig cfg = opts.train;
  apply_schedule_defaults(cfg);

  Dataset ds = load_dataset(opts.data_dir, cfg.scale, cfg.patch_lr);
  Model model = Model::init(preset(opts.preset, cfg.scale), cfg.seed);

  fs::create_directories(opts.out_dir);
  AdamWState state;

  auto save = [&](int iter, const Rng& sampler) {
    CheckpointExtras extras;
    extras.iteration = static_cast<uint64_t>(iter);
    extras.rng_state = sampler.serialize();
    if (state.step > 0) extras.optimizer = state;
    const std::string name = iter == cfg.iters
                                 ? std::string("model.ckpt")
                                 : "ckpt_" + std::to_string(iter) + ".ckpt";
    save_checkpoint((fs::path(opts.out_dir) / name).string(), model, extras);
  };

  TrainResult result = train_loop(model, ds, cfg, state, save);
  if (cfg.iters == 0) {
    // Zero-iteration run still produces the initialization checkpoint.
    save(0, Rng(mix_seed(cfg.seed, 0x5a3c9d)));
  }

  std::ofstream csv(fs::path(opts.out_dir) / "loss.csv");
  if (!csv) throw IoError("cannot write loss.csv under '" + opts.out_dir + "'");
  csv << "iter,loss,lr\n";
  for (const auto& e : result.curve) {
    csv << e.iter << ',' << format_double(e.loss) << ',' << format_double(e.lr) << '\n';
  }
  std::cout << "trained " << cfg.iters << " iterations on " << ds.items.size()
            << " images; artifacts in " << opts.out_dir << "\n";
}

void cmd_infer(const InferOptions& opts) {
  Model model = load_checkpoint(opts.checkpoint);
  const Tensor lr = image_to_tensor(load_png(opts.input));
  const Tensor sr = infer_sr(model, lr);
  save_png(opts.output, tensor_to_image(sr));
  std::cout << opts.output << ": " << sr.dim(2) << "x" << sr.dim(1) << "\n";
}

void cmd_eval(const EvalOptions& opts) {
  Model model = load_checkpoint(opts.checkpoint);
  const int scale = model.config().scale;
  if (opts.scale != 0 && opts.scale != scale) {
    throw ConfigError("eval: requested scale " + std::to_string(opts.scale) +
                      " does not match checkpoint scale " + std::to_string(scale));
  }

  EvalProtocol proto;
  proto.convert_to_y = true;
  proto.crop_border = scale;

  struct Row {
    std::string name;
    double psnr_v, ssim_v, base_psnr, base_ssim;
  };
  std::vector<std::string> files;
  try {
    files = list_pngs(opts.hr_dir);
  } catch (const IoError&) {
    throw;
  }

  // Preload + filter serially so warnings stay ordered.
  std::vector<std::pair<std::string, Tensor>> images;
  const int min_side = (11 + 2 * scale) * scale;
  for (const std::string& path : files) {
    ImageU8 img;
    try {
      img = load_png(path);
    } catch (const Error& e) {
      std::cerr << "warning: skipping '" << path << "': " << e.what() << "\n";
      continue;
    }
    const int h = (img.height / scale) * scale;
    const int w = (img.width / scale) * scale;
    if (h < min_side || w < min_side) {
      std::cerr << "warning: skipping undersized image '" << path << "'\n";
      continue;
    }
    images.emplace_back(fs::path(path).filename().string(),
                        crop_chw(image_to_tensor(img), 0, 0, h, w));
  }
  if (images.empty()) {
    std::cerr << "warning: no usable images in '" << opts.hr_dir << "'; writing empty report\n";
  }

  std::vector<Row> rows(images.size());
  const int threads = std::max(1, std::min<int>(worker_threads(), static_cast<int>(images.size())));
  std::atomic<size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= images.size()) return;
      const Tensor& hr = images[i].second;
      const Tensor lr = bicubic_downscale(hr, scale);
      // Score the quantized 8-bit results, i.e. what the CLI would save.
      const Tensor sr = image_to_tensor(tensor_to_image(infer_sr(model, lr)));
      const Tensor base = image_to_tensor(tensor_to_image(clamp01(bicubic_upscale(lr, scale))));
      rows[i] = Row{images[i].first, psnr(sr, hr, proto), ssim(sr, hr, proto),
                    psnr(base, hr, proto), ssim(base, hr, proto)};
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::ofstream csv(opts.out_csv);
  if (!csv) throw IoError("cannot write '" + opts.out_csv + "'");
  csv << "image,psnr,ssim,baseline_psnr,baseline_ssim\n";
  double sp = 0, ss = 0, bp = 0, bs = 0;
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f\n", r.name.c_str(), r.psnr_v,
                  r.ssim_v, r.base_psnr, r.base_ssim);
    csv << line;
    sp += r.psnr_v;
    ss += r.ssim_v;
    bp += r.base_psnr;
    bs += r.base_ssim;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    std::printf("mean PSNR %.4f dB (bicubic %.4f), mean SSIM %.5f (bicubic %.5f) on %zu images\n",
                sp / n, bp / n, ss / n, bs / n, rows.size());
  }
  std::cout << "report written to " << opts.out_csv << "\n";
}

void cmd_params(const ParamsOptions& opts) {
  const ModelConfig cfg = preset(opts.preset, opts.scale);
  const Model model = Model::init(cfg, 0);
  const size_t n = count_params(model);
  std::cout << opts.preset << " x" << opts.scale << ": " << n << " parameters\n";

  long long reference = 0;
  if (opts.preset == "atd" && opts.scale == 4) reference = 20300000;
  if (opts.preset == "atd_light" && opts.scale == 2) reference = 753000;
  if (reference > 0) {
    const double dev = 100.0 * (static_cast<double>(n) - reference) / reference;
    std::printf("reference %lld; deviation %+.2f%% (%s +-10%%)\n", reference, dev,
                std::fabs(dev) <= 10.0 ? "within" : "OUTSIDE");
  }
}

void cmd_viz_categories(const VizOptions& opts) {
  Model model = load_checkpoint(opts.checkpoint);
  const Tensor lr = image_to_tensor(load_png(opts.input));
  const int h = lr.dim(1), w = lr.dim(2);

  CategoryCapture capture;
  capture.block = opts.block;
  capture.layer = opts.layer;
  (void)model.forward(lr, Mode::eval, 0, &capture);
  if (!capture.captured) {
    throw ContractError("viz-categories: block/layer (" + std::to_string(opts.block) + ", " +
                        std::to_string(opts.layer) + ") produced no labels");
  }

  fs::create_directories(opts.out_dir);
  const int m = model.config().dict_size;
  for (int token = 0; token < m; ++token) {
    ImageU8 mask;
    mask.height = h;
    mask.width = w;
    mask.rgb.assign(static_cast<size_t>(h) * w * 3, 0);
    for (int i = 0; i < h * w; ++i) {
      if (capture.labels[static_cast<size_t>(i)] == token) {
        mask.rgb[static_cast<size_t>(i) * 3] = 255;
        mask.rgb[static_cast<size_t>(i) * 3 + 1] = 255;
        mask.rgb[static_cast<size_t>(i) * 3 + 2] = 255;
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%03d.png", token);
    save_png((fs::path(opts.out_dir) / name).string(), mask);
  }
  std::cout << m << " masks written to " << opts.out_dir << "\n";
}

}  // namespace atd
