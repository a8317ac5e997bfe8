#include "atd/attention.hpp"

#include <cmath>

#include "atd/errors.hpp"

namespace atd {

namespace {

// Reflect-101 folding (no edge duplication); handles pads wider than the
// source by repeated reflection. n == 1 collapses to index 0.
int reflect_fold(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Region id along one axis of the shifted canvas. Tokens may attend only if
// they share region ids on both axes; regions follow the canvas slices
// [0, size-w), [size-w, size-shift), [size-shift, size).
int shift_region(int c, int size, int w, int shift) {
  if (c < size - w) return 0;
  if (c < size - shift) return 1;
  return 2;
}

Tensor init_linear(int rows, int cols, Rng& rng) {
  Tensor t(Shape{rows, cols});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.truncated_normal(0.02);
  t.set_requires_grad(true);
  return t;
}

Tensor init_zeros_param(Shape shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

WindowAttentionParams WindowAttentionParams::init(int dim, int heads, int window, int shift,
                                                  Rng& rng) {
  if (dim % heads != 0) {
    throw ConfigError("window attention: dim " + std::to_string(dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (shift < 0 || shift >= window) {
    throw ConfigError("window attention: shift " + std::to_string(shift) + " must lie in [0, " +
                      std::to_string(window) + ")");
  }
  WindowAttentionParams p;
  p.heads = heads;
  p.window = window;
  p.shift = shift;
  p.w_q = init_linear(dim, dim, rng);
  p.w_k = init_linear(dim, dim, rng);
  p.w_v = init_linear(dim, dim, rng);
  p.w_o = init_linear(dim, dim, rng);
  p.b_q = init_zeros_param(Shape{dim});
  p.b_k = init_zeros_param(Shape{dim});
  p.b_v = init_zeros_param(Shape{dim});
  p.b_o = init_zeros_param(Shape{dim});
  const int span = 2 * window - 1;
  p.rel_pos_bias = init_linear(span * span, heads, rng);
  return p;
}

Tensor window_msa(const Tensor& x, const WindowAttentionParams& p, int H, int W) {
  if (x.ndim() != 2) throw DimensionError("window_msa: tokens must be 2-D, got " + shape_str(x.shape()));
  if (static_cast<size_t>(H) * static_cast<size_t>(W) != static_cast<size_t>(x.dim(0))) {
    throw ContractError("window_msa: N=" + std::to_string(x.dim(0)) + " does not equal H*W=" +
                        std::to_string(H) + "*" + std::to_string(W));
  }
  const int d = x.dim(1);
  if (d % p.heads != 0) {
    throw DimensionError("window_msa: width " + std::to_string(d) + " not divisible by heads " +
                         std::to_string(p.heads));
  }
  const int w = p.window;
  const int s = p.shift;
  const int dh = d / p.heads;
  const int hp = ((H + w - 1) / w) * w;
  const int wp = ((W + w - 1) / w) * w;
  const int wy_n = hp / w;
  const int wx_n = wp / w;
  const int win_tokens = w * w;

  // Reflect-pad and cyclic-shift composed into one row gather.
  std::vector<int> canvas_idx(static_cast<size_t>(hp) * wp);
  for (int y = 0; y < hp; ++y) {
    const int ys = reflect_fold((y + s) % hp, H);
    for (int xx = 0; xx < wp; ++xx) {
      const int xs = reflect_fold((xx + s) % wp, W);
      canvas_idx[static_cast<size_t>(y) * wp + xx] = ys * W + xs;
    }
  }
  Tensor xs = gather_rows(x, canvas_idx);

  Tensor q = add_bias(matmul(xs, p.w_q), p.b_q);
  Tensor k = add_bias(matmul(xs, p.w_k), p.b_k);
  Tensor v = add_bias(matmul(xs, p.w_v), p.b_v);

  // Per-head relative position bias matrices, shared across windows.
  std::vector<Tensor> bias_mats;
  if (p.use_rel_pos_bias) {
    const int span = 2 * w - 1;
    for (int h = 0; h < p.heads; ++h) {
      std::vector<size_t> src(static_cast<size_t>(win_tokens) * win_tokens);
      for (int i = 0; i < win_tokens; ++i) {
        const int yi = i / w, xi = i % w;
        for (int j = 0; j < win_tokens; ++j) {
          const int yj = j / w, xj = j % w;
          const size_t flat = static_cast<size_t>((yi - yj + w - 1) * span + (xi - xj + w - 1));
          src[static_cast<size_t>(i) * win_tokens + j] = flat * p.heads + h;
        }
      }
      bias_mats.push_back(permute_flat(p.rel_pos_bias, src, Shape{win_tokens, win_tokens}));
    }
  }

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> window_outputs;
  window_outputs.reserve(static_cast<size_t>(wy_n) * wx_n);
  for (int wy = 0; wy < wy_n; ++wy) {
    for (int wx = 0; wx < wx_n; ++wx) {
      std::vector<int> widx(static_cast<size_t>(win_tokens));
      for (int i = 0; i < win_tokens; ++i) {
        widx[static_cast<size_t>(i)] = (wy * w + i / w) * wp + (wx * w + i % w);
      }

      Tensor mask;
      if (s > 0) {
        bool needs_mask = false;
        std::vector<double> mvals(static_cast<size_t>(win_tokens) * win_tokens, 0.0);
        std::vector<int> gid(static_cast<size_t>(win_tokens));
        for (int i = 0; i < win_tokens; ++i) {
          const int cy = wy * w + i / w;
          const int cx = wx * w + i % w;
          gid[static_cast<size_t>(i)] =
              shift_region(cy, hp, w, s) * 3 + shift_region(cx, wp, w, s);
        }
        for (int i = 0; i < win_tokens; ++i)
          for (int j = 0; j < win_tokens; ++j)
            if (gid[static_cast<size_t>(i)] != gid[static_cast<size_t>(j)]) {
              mvals[static_cast<size_t>(i) * win_tokens + j] = -1e9;
              needs_mask = true;
            }
        if (needs_mask) mask = Tensor(Shape{win_tokens, win_tokens}, std::move(mvals));
      }

      Tensor qw = gather_rows(q, widx);
      Tensor kw = gather_rows(k, widx);
      Tensor vw = gather_rows(v, widx);
      std::vector<Tensor> head_outs;
      head_outs.reserve(static_cast<size_t>(p.heads));
      for (int h = 0; h < p.heads; ++h) {
        Tensor qh = slice_cols(qw, h * dh, dh);
        Tensor kh = slice_cols(kw, h * dh, dh);
        Tensor vh = slice_cols(vw, h * dh, dh);
        Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        if (p.use_rel_pos_bias) logits = add(logits, bias_mats[static_cast<size_t>(h)]);
        if (mask.defined()) logits = add(logits, mask);
        head_outs.push_back(matmul(softmax(logits), vh));
      }
      window_outputs.push_back(concat_cols(head_outs));
    }
  }
  Tensor y_windows = concat_rows(window_outputs);

  // Undo windowing, undo the shift, crop the padding.
  std::vector<int> out_idx(static_cast<size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    const int ys = (y - s + hp) % hp;
    for (int xx = 0; xx < W; ++xx) {
      const int xsc = (xx - s + wp) % wp;
      const int wi = (ys / w) * wx_n + xsc / w;
      out_idx[static_cast<size_t>(y) * W + xx] = wi * win_tokens + (ys % w) * w + (xsc % w);
    }
  }
  Tensor y = gather_rows(y_windows, out_idx);
  return add_bias(matmul(y, p.w_o), p.b_o);
}

TdcaParams TdcaParams::init(int dim, int inner_dim, Rng& rng) {
  if (inner_dim <= 0) throw ConfigError("tdca: inner_dim must be positive");
  TdcaParams p;
  p.w_q = init_linear(dim, inner_dim, rng);
  p.w_k = init_linear(dim, inner_dim, rng);
  p.w_v = init_linear(dim, dim, rng);
  p.tau = Tensor(Shape{1}, {0.5});
  p.tau.set_requires_grad(true);
  return p;
}

TdcaResult tdca(const Tensor& x, const Tensor& dict_tokens, const TdcaParams& p) {
  if (x.ndim() != 2 || dict_tokens.ndim() != 2) {
    throw DimensionError("tdca: tokens and dictionary must be 2-D");
  }
  if (x.dim(1) != dict_tokens.dim(1)) {
    throw DimensionError("tdca: token width " + shape_str(x.shape()) +
                         " does not match dictionary width " + shape_str(dict_tokens.shape()));
  }
  if (dict_tokens.dim(0) < 1) throw DimensionError("tdca: dictionary must have at least one token");

  Tensor q = matmul(x, p.w_q);
  Tensor k = matmul(dict_tokens, p.w_k);
  Tensor v = matmul(dict_tokens, p.w_v);
  Tensor sim = cosine_sim(q, k);
  Tensor attn = softmax(div_scalar_t(sim, p.tau));
  Tensor out = matmul(attn, v);
  return TdcaResult{out, attn};
}

}  // namespace atd
