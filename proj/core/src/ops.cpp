#include "atd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "atd/errors.hpp"

namespace atd {

namespace {

bool tracked(const Tensor& t) { return GradTape::active() != nullptr && t.requires_grad(); }

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
  }
}

// Rows/cols view of a tensor folded over its last axis.
struct RowView {
  size_t rows, cols;
};

RowView rows_over_last(const Tensor& t, const char* op) {
  if (t.ndim() < 1) throw DimensionError(std::string(op) + ": scalar input unsupported");
  size_t cols = static_cast<size_t>(t.dim(t.ndim() - 1));
  return RowView{t.numel() / cols, cols};
}

void mm_nn(const double* a, const double* b, double* c, size_t n, size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * m;
      for (size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void transpose_into(const double* src, double* dst, size_t rows, size_t cols) {
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const size_t n = static_cast<size_t>(a.dim(0));
  const size_t k = static_cast<size_t>(a.dim(1));
  const size_t m = static_cast<size_t>(b.dim(1));
  Tensor out(Shape{a.dim(0), b.dim(1)});
  mm_nn(a.data(), b.data(), out.data(), n, k, m);

  if (tracked(a) || tracked(b)) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out, n, k, m]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      // Both passes run the accumulate-row kernel on materialized
      // transposes; the alternative reduction loops do not vectorize.
      if (a.requires_grad()) {
        std::vector<double> bt(k * m);
        transpose_into(b.data(), bt.data(), k, m);
        mm_nn(g, bt.data(), a.grad().data(), n, m, k);  // dA = G * B^T
      }
      if (b.requires_grad()) {
        std::vector<double> at(n * k);
        transpose_into(a.data(), at.data(), n, k);
        mm_nn(at.data(), g, b.grad().data(), k, n, m);  // dB = A^T * G
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const auto rv = rows_over_last(x, "softmax");
  Tensor out = Tensor::uninit(x.shape());
  const double* xd = x.data();
  double* yd = out.data();
  for (size_t r = 0; r < rv.rows; ++r) {
    const double* xr = xd + r * rv.cols;
    double* yr = yd + r * rv.cols;
    double mx = xr[0];
    for (size_t j = 1; j < rv.cols; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (size_t j = 0; j < rv.cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    const double inv = 1.0 / s;
    for (size_t j = 0; j < rv.cols; ++j) yr[j] *= inv;
  }

  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, rv]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      const double* y = out.data();
      double* gx = x.grad().data();
      for (size_t r = 0; r < rv.rows; ++r) {
        const double* gr = g + r * rv.cols;
        const double* yr = y + r * rv.cols;
        double dot = 0.0;
        for (size_t j = 0; j < rv.cols; ++j) dot += gr[j] * yr[j];
        double* gxr = gx + r * rv.cols;
        for (size_t j = 0; j < rv.cols; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const auto rv = rows_over_last(x, "layer_norm");
  if (gamma.numel() != rv.cols || beta.numel() != rv.cols) {
    throw DimensionError("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match feature width " +
                         std::to_string(rv.cols));
  }
  Tensor out = Tensor::uninit(x.shape());
  // Cached normalized values and inverse stddev for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rv.rows);
  const double* xd = x.data();
  const double* gd = gamma.data();
  const double* bd = beta.data();
  double* yd = out.data();
  for (size_t r = 0; r < rv.rows; ++r) {
    const double* xr = xd + r * rv.cols;
    double mu = 0.0;
    for (size_t j = 0; j < rv.cols; ++j) mu += xr[j];
    mu /= static_cast<double>(rv.cols);
    double var = 0.0;
    for (size_t j = 0; j < rv.cols; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(rv.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    double* hr = xhat->data() + r * rv.cols;
    double* yr = yd + r * rv.cols;
    for (size_t j = 0; j < rv.cols; ++j) {
      hr[j] = (xr[j] - mu) * inv;
      yr[j] = gd[j] * hr[j] + bd[j];
    }
  }

  if (tracked(x) || tracked(gamma) || tracked(beta)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, gamma, beta, out, rv, xhat, inv_std]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      const double* h = xhat->data();
      const double* gd = gamma.data();
      const double cols = static_cast<double>(rv.cols);
      if (gamma.requires_grad()) {
        double* gg = gamma.grad().data();
        for (size_t r = 0; r < rv.rows; ++r)
          for (size_t j = 0; j < rv.cols; ++j) gg[j] += g[r * rv.cols + j] * h[r * rv.cols + j];
      }
      if (beta.requires_grad()) {
        double* gb = beta.grad().data();
        for (size_t r = 0; r < rv.rows; ++r)
          for (size_t j = 0; j < rv.cols; ++j) gb[j] += g[r * rv.cols + j];
      }
      if (x.requires_grad()) {
        double* gx = x.grad().data();
        for (size_t r = 0; r < rv.rows; ++r) {
          const double* gr = g + r * rv.cols;
          const double* hr = h + r * rv.cols;
          double m1 = 0.0, m2 = 0.0;
          for (size_t j = 0; j < rv.cols; ++j) {
            const double gy = gr[j] * gd[j];
            m1 += gy;
            m2 += gy * hr[j];
          }
          m1 /= cols;
          m2 /= cols;
          const double inv = (*inv_std)[r];
          double* gxr = gx + r * rv.cols;
          for (size_t j = 0; j < rv.cols; ++j) {
            const double gy = gr[j] * gd[j];
            gxr[j] += inv * (gy - m1 - hr[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor standardize_rows(const Tensor& x, double eps) {
  if (eps <= 0.0) throw ContractError("standardize_rows: eps must be positive");
  const auto rv = rows_over_last(x, "standardize_rows");
  Tensor out = Tensor::uninit(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rv.rows);
  const double* xd = x.data();
  double* yd = out.data();
  for (size_t r = 0; r < rv.rows; ++r) {
    const double* xr = xd + r * rv.cols;
    double mu = 0.0;
    for (size_t j = 0; j < rv.cols; ++j) mu += xr[j];
    mu /= static_cast<double>(rv.cols);
    double var = 0.0;
    for (size_t j = 0; j < rv.cols; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(rv.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    double* yr = yd + r * rv.cols;
    for (size_t j = 0; j < rv.cols; ++j) yr[j] = (xr[j] - mu) * inv;
  }

  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, rv, inv_std]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      const double* y = out.data();
      double* gx = x.grad().data();
      const double cols = static_cast<double>(rv.cols);
      for (size_t r = 0; r < rv.rows; ++r) {
        const double* gr = g + r * rv.cols;
        const double* yr = y + r * rv.cols;
        double m1 = 0.0, m2 = 0.0;
        for (size_t j = 0; j < rv.cols; ++j) {
          m1 += gr[j];
          m2 += gr[j] * yr[j];
        }
        m1 /= cols;
        m2 /= cols;
        const double inv = (*inv_std)[r];
        double* gxr = gx + r * rv.cols;
        for (size_t j = 0; j < rv.cols; ++j) gxr[j] += inv * (gr[j] - m1 - yr[j] * m2);
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 3) throw DimensionError("conv2d: input must be [C x H x W], got " + shape_str(x.shape()));
  if (w.ndim() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    throw DimensionError("conv2d: kernel must be [C_out x C_in x 3 x 3], got " + shape_str(w.shape()));
  }
  if (w.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(w.shape()));
  }
  if (b.numel() != static_cast<size_t>(w.dim(0))) {
    throw DimensionError("conv2d: bias " + shape_str(b.shape()) + " vs kernel " + shape_str(w.shape()));
  }
  const int ci_n = x.dim(0), h = x.dim(1), wd = x.dim(2), co_n = w.dim(0);
  Tensor out = Tensor::uninit(Shape{co_n, h, wd});
  const double* xd = x.data();
  const double* wdta = w.data();
  const double* bd = b.data();
  double* yd = out.data();
  const size_t hw = static_cast<size_t>(h) * wd;
  for (int co = 0; co < co_n; ++co) {
    double* yplane = yd + static_cast<size_t>(co) * hw;
    for (size_t i = 0; i < hw; ++i) yplane[i] = bd[co];
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* xplane = xd + static_cast<size_t>(ci) * hw;
      const double* kw = wdta + ((static_cast<size_t>(co) * ci_n + ci) * 9);
      for (int y = 0; y < h; ++y) {
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          const double* xrow = xplane + static_cast<size_t>(yy) * wd;
          double* yrow = yplane + static_cast<size_t>(y) * wd;
          const double* kr = kw + (dy + 1) * 3;
          for (int xx = 0; xx < wd; ++xx) {
            double acc = 0.0;
            if (xx > 0) acc += xrow[xx - 1] * kr[0];
            acc += xrow[xx] * kr[1];
            if (xx + 1 < wd) acc += xrow[xx + 1] * kr[2];
            yrow[xx] += acc;
          }
        }
      }
    }
  }

  if (tracked(x) || tracked(w) || tracked(b)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, w, b, out, ci_n, co_n, h, wd, hw]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      const double* xd = x.data();
      const double* wdta = w.data();
      double* gx = x.requires_grad() ? x.grad().data() : nullptr;
      double* gw = w.requires_grad() ? w.grad().data() : nullptr;
      double* gb = b.requires_grad() ? b.grad().data() : nullptr;
      for (int co = 0; co < co_n; ++co) {
        const double* gplane = g + static_cast<size_t>(co) * hw;
        if (gb) {
          double s = 0.0;
          for (size_t i = 0; i < hw; ++i) s += gplane[i];
          gb[co] += s;
        }
        for (int ci = 0; ci < ci_n; ++ci) {
          const double* xplane = xd + static_cast<size_t>(ci) * hw;
          const size_t kbase = (static_cast<size_t>(co) * ci_n + ci) * 9;
          for (int y = 0; y < h; ++y) {
            const double* grow = gplane + static_cast<size_t>(y) * wd;
            for (int dy = -1; dy <= 1; ++dy) {
              const int yy = y + dy;
              if (yy < 0 || yy >= h) continue;
              const double* xrow = xplane + static_cast<size_t>(yy) * wd;
              double* gxrow = gx ? gx + static_cast<size_t>(ci) * hw + static_cast<size_t>(yy) * wd : nullptr;
              for (int dx = -1; dx <= 1; ++dx) {
                const size_t ki = kbase + static_cast<size_t>(dy + 1) * 3 + (dx + 1);
                const double kv = wdta[ki];
                double gwacc = 0.0;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(wd, wd - dx);
                for (int xx = x0; xx < x1; ++xx) {
                  const double gv = grow[xx];
                  gwacc += gv * xrow[xx + dx];
                  if (gxrow) gxrow[xx + dx] += gv * kv;
                }
                if (gw) gw[ki] += gwacc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

Tensor apply_permutation(const Tensor& x, std::shared_ptr<std::vector<size_t>> src, Shape out_shape,
                         const char* /*op*/) {
  Tensor out = Tensor::uninit(std::move(out_shape));
  const double* xd = x.data();
  double* yd = out.data();
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) yd[i] = xd[(*src)[i]];
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, src, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i) gx[(*src)[i]] += g[i];
    });
  }
  return out;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int s) {
  if (s <= 0) throw ContractError("pixel_shuffle: scale must be positive");
  if (x.ndim() != 3) throw DimensionError("pixel_shuffle: input must be [C x H x W], got " + shape_str(x.shape()));
  const int cs = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (cs % (s * s) != 0) {
    throw DimensionError("pixel_shuffle: channels " + std::to_string(cs) + " not divisible by s^2=" +
                         std::to_string(s * s));
  }
  const int c = cs / (s * s);
  auto src = std::make_shared<std::vector<size_t>>(x.numel());
  size_t i = 0;
  for (int cc = 0; cc < c; ++cc)
    for (int y = 0; y < h * s; ++y)
      for (int xx = 0; xx < w * s; ++xx) {
        const int dy = y % s, dx = xx % s;
        const int cin = cc * s * s + dy * s + dx;
        (*src)[i++] = (static_cast<size_t>(cin) * h + y / s) * w + xx / s;
      }
  return apply_permutation(x, std::move(src), Shape{c, h * s, w * s}, "pixel_shuffle");
}

Tensor pixel_unshuffle(const Tensor& x, int s) {
  if (s <= 0) throw ContractError("pixel_unshuffle: scale must be positive");
  if (x.ndim() != 3) throw DimensionError("pixel_unshuffle: input must be [C x H x W], got " + shape_str(x.shape()));
  const int c = x.dim(0), hs = x.dim(1), ws = x.dim(2);
  if (hs % s != 0 || ws % s != 0) {
    throw DimensionError("pixel_unshuffle: spatial dims " + shape_str(x.shape()) +
                         " not divisible by s=" + std::to_string(s));
  }
  const int h = hs / s, w = ws / s;
  auto src = std::make_shared<std::vector<size_t>>(x.numel());
  size_t i = 0;
  for (int cout = 0; cout < c * s * s; ++cout) {
    const int cc = cout / (s * s);
    const int dy = (cout % (s * s)) / s;
    const int dx = cout % s;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        (*src)[i++] = (static_cast<size_t>(cc) * hs + (y * s + dy)) * ws + (xx * s + dx);
  }
  return apply_permutation(x, std::move(src), Shape{c * s * s, h, w}, "pixel_unshuffle");
}

Tensor cosine_sim(const Tensor& q, const Tensor& k, double eps) {
  if (eps <= 0.0) throw ContractError("cosine_sim: eps must be positive");
  require_2d(q, "cosine_sim");
  require_2d(k, "cosine_sim");
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("cosine_sim: widths differ: " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
  }
  const size_t n = static_cast<size_t>(q.dim(0));
  const size_t m = static_cast<size_t>(k.dim(0));
  const size_t c = static_cast<size_t>(q.dim(1));

  auto qn = std::make_shared<std::vector<double>>(q.numel());
  auto kn = std::make_shared<std::vector<double>>(k.numel());
  auto qnorm = std::make_shared<std::vector<double>>(n);
  auto knorm = std::make_shared<std::vector<double>>(m);
  auto qgate = std::make_shared<std::vector<char>>(n);
  auto kgate = std::make_shared<std::vector<char>>(m);

  auto normalize = [&](const double* src, size_t rows, std::vector<double>& dst,
                       std::vector<double>& norms, std::vector<char>& gates) {
    for (size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < c; ++j) s += src[i * c + j] * src[i * c + j];
      const double nrm = std::sqrt(s);
      gates[i] = nrm > eps ? 1 : 0;
      const double denom = std::max(nrm, eps);
      norms[i] = denom;
      for (size_t j = 0; j < c; ++j) dst[i * c + j] = src[i * c + j] / denom;
    }
  };
  normalize(q.data(), n, *qn, *qnorm, *qgate);
  normalize(k.data(), m, *kn, *knorm, *kgate);

  Tensor out = Tensor::uninit(Shape{q.dim(0), k.dim(0)});
  double* yd = out.data();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (size_t p = 0; p < c; ++p) s += (*qn)[i * c + p] * (*kn)[j * c + p];
      yd[i * m + j] = s;
    }

  if (tracked(q) || tracked(k)) {
    out.set_requires_grad(true);
    GradTape::active()->record([q, k, out, qn, kn, qnorm, knorm, qgate, kgate, n, m, c]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      const double* s = out.data();
      if (q.requires_grad()) {
        double* gq = q.grad().data();
        for (size_t i = 0; i < n; ++i) {
          double rowdot = 0.0;
          std::vector<double> t(c, 0.0);
          for (size_t j = 0; j < m; ++j) {
            const double gv = g[i * m + j];
            if (gv == 0.0) continue;
            rowdot += gv * s[i * m + j];
            for (size_t p = 0; p < c; ++p) t[p] += gv * (*kn)[j * c + p];
          }
          const double inv = 1.0 / (*qnorm)[i];
          const double gate = (*qgate)[i] ? 1.0 : 0.0;
          for (size_t p = 0; p < c; ++p)
            gq[i * c + p] += inv * (t[p] - gate * rowdot * (*qn)[i * c + p]);
        }
      }
      if (k.requires_grad()) {
        double* gk = k.grad().data();
        std::vector<double> coldot(m, 0.0), t(m * c, 0.0);
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < m; ++j) {
            const double gv = g[i * m + j];
            if (gv == 0.0) continue;
            coldot[j] += gv * s[i * m + j];
            for (size_t p = 0; p < c; ++p) t[j * c + p] += gv * (*qn)[i * c + p];
          }
        for (size_t j = 0; j < m; ++j) {
          const double inv = 1.0 / (*knorm)[j];
          const double gate = (*kgate)[j] ? 1.0 : 0.0;
          for (size_t p = 0; p < c; ++p)
            gk[j * c + p] += inv * (t[j * c + p] - gate * coldot[j] * (*kn)[j * c + p]);
        }
      }
    });
  }
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::uninit(a.shape());
  const size_t n = a.numel();
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
  if (tracked(a) || tracked(b)) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      if (a.requires_grad()) {
        double* ga = a.grad().data();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        for (size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::uninit(a.shape());
  const size_t n = a.numel();
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = ad[i] - bd[i];
  if (tracked(a) || tracked(b)) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      if (a.requires_grad()) {
        double* ga = a.grad().data();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::uninit(a.shape());
  const size_t n = a.numel();
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
  if (tracked(a) || tracked(b)) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      if (a.requires_grad()) {
        double* ga = a.grad().data();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        for (size_t i = 0; i < n; ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const auto rv = rows_over_last(x, "add_bias");
  if (b.numel() != rv.cols) {
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " vs feature width " +
                         std::to_string(rv.cols));
  }
  Tensor out = Tensor::uninit(x.shape());
  const double* xd = x.data();
  const double* bd = b.data();
  double* yd = out.data();
  for (size_t r = 0; r < rv.rows; ++r)
    for (size_t j = 0; j < rv.cols; ++j) yd[r * rv.cols + j] = xd[r * rv.cols + j] + bd[j];
  if (tracked(x) || tracked(b)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, b, out, rv]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      if (x.requires_grad()) {
        double* gx = x.grad().data();
        const size_t n = rv.rows * rv.cols;
        for (size_t i = 0; i < n; ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        for (size_t r = 0; r < rv.rows; ++r)
          for (size_t j = 0; j < rv.cols; ++j) gb[j] += g[r * rv.cols + j];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::uninit(x.shape());
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = c * xd[i];
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, c, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i) gx[i] += c * g[i];
    });
  }
  return out;
}

namespace {

void require_scalar_t(const Tensor& s, const char* op) {
  if (s.numel() != 1) {
    throw DimensionError(std::string(op) + ": scalar tensor expected, got " + shape_str(s.shape()));
  }
}

}  // namespace

Tensor add_scalar_t(const Tensor& x, const Tensor& s) {
  require_scalar_t(s, "add_scalar_t");
  Tensor out = Tensor::uninit(x.shape());
  const double sv = s[0];
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = xd[i] + sv;
  if (tracked(x) || tracked(s)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, s, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      if (x.requires_grad()) {
        double* gx = x.grad().data();
        for (size_t i = 0; i < n; ++i) gx[i] += g[i];
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += g[i];
        s.grad()[0] += acc;
      }
    });
  }
  return out;
}

Tensor mul_scalar_t(const Tensor& x, const Tensor& s) {
  require_scalar_t(s, "mul_scalar_t");
  Tensor out = Tensor::uninit(x.shape());
  const double sv = s[0];
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = xd[i] * sv;
  if (tracked(x) || tracked(s)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, s, out, n, sv]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      if (x.requires_grad()) {
        double* gx = x.grad().data();
        for (size_t i = 0; i < n; ++i) gx[i] += sv * g[i];
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += g[i] * x[i];
        s.grad()[0] += acc;
      }
    });
  }
  return out;
}

Tensor div_scalar_t(const Tensor& x, const Tensor& s) {
  require_scalar_t(s, "div_scalar_t");
  Tensor out = Tensor::uninit(x.shape());
  const double sv = s[0];
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = xd[i] / sv;
  if (tracked(x) || tracked(s)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, s, out, n, sv]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      if (x.requires_grad()) {
        double* gx = x.grad().data();
        for (size_t i = 0; i < n; ++i) gx[i] += g[i] / sv;
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += g[i] * x[i];
        s.grad()[0] -= acc / (sv * sv);
      }
    });
  }
  return out;
}

Tensor sub_from_const(double c, const Tensor& x) {
  Tensor out = Tensor::uninit(x.shape());
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = c - xd[i];
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i) gx[i] -= g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const size_t n = x.numel();
  const double* xd = x.data();
  for (size_t i = 0; i < n; ++i) acc += xd[i];
  Tensor out = Tensor::scalar(acc);
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double g = out.grad_const()[0];
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const size_t n = x.numel();
  double acc = 0.0;
  const double* xd = x.data();
  for (size_t i = 0; i < n; ++i) acc += xd[i];
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double g = out.grad_const()[0] / static_cast<double>(n);
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor abs(const Tensor& x) {
  Tensor out = Tensor::uninit(x.shape());
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = std::fabs(xd[i]);
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i) {
        const double v = x[i];
        gx[i] += g[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::uninit(x.shape());
  const size_t n = x.numel();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * inv_sqrt2));
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::uninit(x.shape());
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) {
    const double v = xd[i];
    od[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      const double* y = out.data();
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const size_t n = static_cast<size_t>(x.dim(0));
  const size_t m = static_cast<size_t>(x.dim(1));
  Tensor out = Tensor::uninit(Shape{x.dim(1), x.dim(0)});
  const double* xd = x.data();
  double* yd = out.data();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) yd[j * n + i] = xd[i * m + j];
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, n, m]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  require_2d(x, "gather_rows");
  const size_t cols = static_cast<size_t>(x.dim(1));
  const int rows = x.dim(0);
  for (int i : idx) {
    if (i < 0 || i >= rows) {
      throw ContractError("gather_rows: index " + std::to_string(i) + " out of range [0, " +
                          std::to_string(rows) + ")");
    }
  }
  Tensor out = Tensor::uninit(Shape{static_cast<int>(idx.size()), x.dim(1)});
  const double* xd = x.data();
  double* yd = out.data();
  for (size_t r = 0; r < idx.size(); ++r) {
    const double* src = xd + static_cast<size_t>(idx[r]) * cols;
    double* dst = yd + r * cols;
    std::copy(src, src + cols, dst);
  }
  if (tracked(x)) {
    auto ix = std::make_shared<std::vector<int>>(idx);
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, ix, cols]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      for (size_t r = 0; r < ix->size(); ++r) {
        double* dst = gx + static_cast<size_t>((*ix)[r]) * cols;
        const double* src = g + r * cols;
        for (size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  require_2d(x, "slice_cols");
  if (start < 0 || len <= 0 || start + len > x.dim(1)) {
    throw ContractError("slice_cols: range [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") outside width " + std::to_string(x.dim(1)));
  }
  const size_t rows = static_cast<size_t>(x.dim(0));
  const size_t cols = static_cast<size_t>(x.dim(1));
  Tensor out = Tensor::uninit(Shape{x.dim(0), len});
  const double* xd = x.data();
  double* yd = out.data();
  for (size_t r = 0; r < rows; ++r)
    std::copy(xd + r * cols + start, xd + r * cols + start + len, yd + r * static_cast<size_t>(len));
  if (tracked(x)) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, rows, cols, start, len]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      double* gx = x.grad().data();
      for (size_t r = 0; r < rows; ++r)
        for (int j = 0; j < len; ++j) gx[r * cols + start + j] += g[r * static_cast<size_t>(len) + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row counts differ: " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  Tensor out = Tensor::uninit(Shape{rows, total});
  double* yd = out.data();
  int off = 0;
  for (const auto& p : parts) {
    const size_t w = static_cast<size_t>(p.dim(1));
    const double* pd = p.data();
    for (int r = 0; r < rows; ++r)
      std::copy(pd + static_cast<size_t>(r) * w, pd + static_cast<size_t>(r) * w + w,
                yd + static_cast<size_t>(r) * total + off);
    off += p.dim(1);
  }
  bool any = false;
  for (const auto& p : parts) any = any || tracked(p);
  if (any) {
    auto ps = std::make_shared<std::vector<Tensor>>(parts);
    out.set_requires_grad(true);
    GradTape::active()->record([ps, out, rows, total]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      int off = 0;
      for (auto& p : *ps) {
        const size_t w = static_cast<size_t>(p.dim(1));
        if (p.requires_grad()) {
          double* gp = p.grad().data();
          for (int r = 0; r < rows; ++r)
            for (size_t j = 0; j < w; ++j)
              gp[static_cast<size_t>(r) * w + j] += g[static_cast<size_t>(r) * total + off + j];
        }
        off += p.dim(1);
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const int cols = parts[0].dim(1);
  int total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.dim(1) != cols) {
      throw DimensionError("concat_rows: widths differ: " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.dim(0);
  }
  Tensor out = Tensor::uninit(Shape{total, cols});
  double* yd = out.data();
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), yd + off);
    off += p.numel();
  }
  bool any = false;
  for (const auto& p : parts) any = any || tracked(p);
  if (any) {
    auto ps = std::make_shared<std::vector<Tensor>>(parts);
    out.set_requires_grad(true);
    GradTape::active()->record([ps, out]() mutable {
      if (!out.grad_allocated()) return;
      const double* g = out.grad_const().data();
      size_t off = 0;
      for (auto& p : *ps) {
        if (p.requires_grad()) {
          double* gp = p.grad().data();
          for (size_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

Tensor permute_flat(const Tensor& x, const std::vector<size_t>& src, Shape out_shape) {
  if (src.size() != shape_numel(out_shape)) {
    throw DimensionError("permute_flat: index count " + std::to_string(src.size()) +
                         " vs output shape " + shape_str(out_shape));
  }
  for (size_t i : src) {
    if (i >= x.numel()) throw ContractError("permute_flat: source index out of range");
  }
  return apply_permutation(x, std::make_shared<std::vector<size_t>>(src), std::move(out_shape),
                           "permute_flat");
}

Tensor tokens_to_chw(const Tensor& x, int H, int W) {
  require_2d(x, "tokens_to_chw");
  if (static_cast<size_t>(H) * W != static_cast<size_t>(x.dim(0))) {
    throw DimensionError("tokens_to_chw: " + std::to_string(x.dim(0)) + " tokens vs " +
                         std::to_string(H) + "x" + std::to_string(W) + " grid");
  }
  const int c = x.dim(1);
  auto src = std::make_shared<std::vector<size_t>>(x.numel());
  size_t i = 0;
  for (int cc = 0; cc < c; ++cc)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        (*src)[i++] = static_cast<size_t>(y * W + xx) * c + cc;
  return apply_permutation(x, std::move(src), Shape{c, H, W}, "tokens_to_chw");
}

Tensor chw_to_tokens(const Tensor& x) {
  if (x.ndim() != 3) throw DimensionError("chw_to_tokens: input must be [C x H x W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto src = std::make_shared<std::vector<size_t>>(x.numel());
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int cc = 0; cc < c; ++cc)
        (*src)[i++] = (static_cast<size_t>(cc) * h + y) * w + xx;
  return apply_permutation(x, std::move(src), Shape{h * w, c}, "chw_to_tokens");
}

Tensor clamp01(const Tensor& x) {
  Tensor out = Tensor::uninit(x.shape());
  const size_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (size_t i = 0; i < n; ++i) od[i] = std::clamp(xd[i], 0.0, 1.0);
  return out;
}

GradCheckReport grad_check(const std::function<Tensor(Tensor&)>& f, Tensor x, double h, double tol) {
  if (!(h > 0.0 && h <= 1e-2)) throw ContractError("grad_check: h must lie in (0, 1e-2]");

  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic(x.numel(), 0.0);
  {
    GradTape tape;
    TapeScope scope(tape);
    Tensor y = f(x);
    if (y.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
    tape.backward(y);
    analytic = x.grad();
  }

  std::vector<double> numeric(x.numel(), 0.0);
  {
    TapeSuspend suspend;
    for (size_t i = 0; i < x.numel(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double yp = f(x).item();
      x[i] = orig - h;
      const double ym = f(x).item();
      x[i] = orig;
      numeric[i] = (yp - ym) / (2.0 * h);
    }
  }

  double amax = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    amax = std::max(amax, std::fabs(analytic[i]));
    amax = std::max(amax, std::fabs(numeric[i]));
  }
  const double denom = std::max(1.0, amax);
  double err = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    err = std::max(err, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return GradCheckReport{err, err < tol};
}

}  // namespace atd
