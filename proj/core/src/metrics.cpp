#include "atd/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "atd/errors.hpp"

namespace atd {

namespace {

void require_image(const Tensor& t, const char* op) {
  if (t.ndim() != 3 || (t.dim(0) != 3 && t.dim(0) != 1)) {
    throw ContractError(std::string(op) + ": expected [3 x H x W] or [1 x H x W], got " +
                        shape_str(t.shape()));
  }
}

// Planes used for scoring, already on the 0..255 range and border-cropped.
// convert_to_y collapses RGB to one luminance plane; otherwise each channel
// is scored on its own plane.
std::vector<std::vector<double>> score_planes(const Tensor& img, const EvalProtocol& proto,
                                              int* out_h, int* out_w) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int cb = proto.crop_border;
  const int ch = h - 2 * cb, cw = w - 2 * cb;
  if (ch <= 0 || cw <= 0) throw ContractError("metrics: border crop removes the whole image");
  *out_h = ch;
  *out_w = cw;
  const double* d = img.data();
  const size_t hw = static_cast<size_t>(h) * w;

  std::vector<std::vector<double>> planes;
  if (proto.convert_to_y && c == 3) {
    std::vector<double> y(static_cast<size_t>(ch) * cw);
    for (int yy = 0; yy < ch; ++yy)
      for (int xx = 0; xx < cw; ++xx) {
        const size_t src = static_cast<size_t>(yy + cb) * w + (xx + cb);
        y[static_cast<size_t>(yy) * cw + xx] =
            65.481 * d[src] + 128.553 * d[hw + src] + 24.966 * d[2 * hw + src] + 16.0;
      }
    planes.push_back(std::move(y));
  } else {
    for (int cc = 0; cc < c; ++cc) {
      std::vector<double> p(static_cast<size_t>(ch) * cw);
      for (int yy = 0; yy < ch; ++yy)
        for (int xx = 0; xx < cw; ++xx) {
          const size_t src = static_cast<size_t>(cc) * hw + static_cast<size_t>(yy + cb) * w + (xx + cb);
          p[static_cast<size_t>(yy) * cw + xx] = 255.0 * d[src];
        }
      planes.push_back(std::move(p));
    }
  }
  return planes;
}

}  // namespace

std::vector<double> luminance_255(const Tensor& img) {
  require_image(img, "luminance_255");
  EvalProtocol proto;
  proto.convert_to_y = true;
  proto.crop_border = 0;
  int h = 0, w = 0;
  return score_planes(img, proto, &h, &w)[0];
}

double psnr(const Tensor& a, const Tensor& b, const EvalProtocol& proto) {
  require_image(a, "psnr");
  require_image(b, "psnr");
  if (a.shape() != b.shape()) {
    throw ContractError("psnr: shapes differ: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  int h = 0, w = 0;
  const auto pa = score_planes(a, proto, &h, &w);
  const auto pb = score_planes(b, proto, &h, &w);
  double se = 0.0;
  size_t n = 0;
  for (size_t p = 0; p < pa.size(); ++p) {
    for (size_t i = 0; i < pa[p].size(); ++i) {
      const double d = pa[p][i] - pb[p][i];
      se += d * d;
    }
    n += pa[p].size();
  }
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return 100.0;
  return 10.0 * std::log10(proto.data_range * proto.data_range / mse);
}

double ssim(const Tensor& a, const Tensor& b, const EvalProtocol& proto) {
  require_image(a, "ssim");
  require_image(b, "ssim");
  if (a.shape() != b.shape()) {
    throw ContractError("ssim: shapes differ: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  int h = 0, w = 0;
  const auto pa = score_planes(a, proto, &h, &w);
  const auto pb = score_planes(b, proto, &h, &w);
  constexpr int win = 11;
  if (h < win || w < win) {
    throw ContractError("ssim: image side " + std::to_string(std::min(h, w)) +
                        " smaller than the 11x11 window");
  }

  // Normalized 11x11 Gaussian, sigma 1.5.
  double kernel[win * win];
  {
    double s = 0.0;
    for (int y = 0; y < win; ++y)
      for (int x = 0; x < win; ++x) {
        const double dy = y - 5, dx = x - 5;
        kernel[y * win + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
        s += kernel[y * win + x];
      }
    for (double& k : kernel) k /= s;
  }

  const double c1 = (0.01 * proto.data_range) * (0.01 * proto.data_range);
  const double c2 = (0.03 * proto.data_range) * (0.03 * proto.data_range);

  double total = 0.0;
  size_t count = 0;
  for (size_t p = 0; p < pa.size(); ++p) {
    const auto& x = pa[p];
    const auto& y = pb[p];
    for (int oy = 0; oy + win <= h; ++oy) {
      for (int ox = 0; ox + win <= w; ++ox) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int ky = 0; ky < win; ++ky)
          for (int kx = 0; kx < win; ++kx) {
            const double kv = kernel[ky * win + kx];
            const double xv = x[static_cast<size_t>(oy + ky) * w + (ox + kx)];
            const double yv = y[static_cast<size_t>(oy + ky) * w + (ox + kx)];
            mx += kv * xv;
            my += kv * yv;
            sxx += kv * xv * xv;
            syy += kv * yv * yv;
            sxy += kv * xv * yv;
          }
        const double vx = sxx - mx * mx;
        const double vy = syy - my * my;
        const double cxy = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

namespace {

double cubic_kernel(double t) {
  // Keys kernel with a = -0.5.
  t = std::fabs(t);
  if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}

struct AxisTaps {
  std::vector<int> index;      // out * taps flattened, clamped to [0, n)
  std::vector<double> weight;  // normalized
  int taps = 0;
};

AxisTaps build_taps(int n, int m) {
  const double ratio = static_cast<double>(m) / n;
  const double k = std::min(ratio, 1.0);  // antialias widening when downscaling
  const double support = 2.0 / k;
  AxisTaps t;
  t.taps = static_cast<int>(std::ceil(support)) * 2 + 2;
  t.index.resize(static_cast<size_t>(m) * t.taps);
  t.weight.assign(static_cast<size_t>(m) * t.taps, 0.0);
  for (int i = 0; i < m; ++i) {
    const double u = (i + 0.5) / ratio - 0.5;
    const int left = static_cast<int>(std::floor(u - support)) + 1;
    double sum = 0.0;
    for (int j = 0; j < t.taps; ++j) {
      const int src = left + j;
      const double wv = cubic_kernel((u - src) * k);
      t.index[static_cast<size_t>(i) * t.taps + j] = std::clamp(src, 0, n - 1);
      t.weight[static_cast<size_t>(i) * t.taps + j] = wv;
      sum += wv;
    }
    for (int j = 0; j < t.taps; ++j) t.weight[static_cast<size_t>(i) * t.taps + j] /= sum;
  }
  return t;
}

Tensor resample(const Tensor& img, int out_h, int out_w) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const AxisTaps tx = build_taps(w, out_w);
  const AxisTaps ty = build_taps(h, out_h);

  // Horizontal pass, then vertical.
  std::vector<double> mid(static_cast<size_t>(c) * h * out_w);
  const double* src = img.data();
  for (int cc = 0; cc < c; ++cc)
    for (int y = 0; y < h; ++y) {
      const double* row = src + (static_cast<size_t>(cc) * h + y) * w;
      double* orow = mid.data() + (static_cast<size_t>(cc) * h + y) * out_w;
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int j = 0; j < tx.taps; ++j)
          acc += tx.weight[static_cast<size_t>(x) * tx.taps + j] *
                 row[tx.index[static_cast<size_t>(x) * tx.taps + j]];
        orow[x] = acc;
      }
    }

  Tensor out = Tensor::uninit(Shape{c, out_h, out_w});
  double* dst = out.data();
  for (int cc = 0; cc < c; ++cc)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int j = 0; j < ty.taps; ++j) {
          const int sy = ty.index[static_cast<size_t>(y) * ty.taps + j];
          acc += ty.weight[static_cast<size_t>(y) * ty.taps + j] *
                 mid[(static_cast<size_t>(cc) * h + sy) * out_w + x];
        }
        dst[(static_cast<size_t>(cc) * out_h + y) * out_w + x] = acc;
      }
  return out;
}

void require_scale(int scale, const char* op) {
  if (scale < 2 || scale > 4) {
    throw ContractError(std::string(op) + ": scale must be 2, 3, or 4, got " +
                        std::to_string(scale));
  }
}

}  // namespace

Tensor bicubic_upscale(const Tensor& img, int scale) {
  require_image(img, "bicubic_upscale");
  require_scale(scale, "bicubic_upscale");
  return resample(img, img.dim(1) * scale, img.dim(2) * scale);
}

Tensor bicubic_downscale(const Tensor& img, int scale) {
  require_image(img, "bicubic_downscale");
  require_scale(scale, "bicubic_downscale");
  const int oh = (img.dim(1) + scale - 1) / scale;
  const int ow = (img.dim(2) + scale - 1) / scale;
  return resample(img, oh, ow);
}

}  // namespace atd
