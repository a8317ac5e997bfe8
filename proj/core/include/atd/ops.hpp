#pragma once

#include <functional>
#include <vector>

#include "atd/tensor.hpp"

namespace atd {

// Differentiable operations over Tensor. Every op records its backward pass
// onto the active GradTape when any input requires gradients. All functions
// are pure: inputs are never modified, outputs own fresh storage (except
// Tensor::reshaped, which is a view).

// [NxK] x [KxM] -> [NxM]
Tensor matmul(const Tensor& a, const Tensor& b);

// Softmax over the last axis, max-subtracted for overflow safety.
Tensor softmax(const Tensor& x);

// Per-row normalization over the last axis (biased variance), then affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Per-row zero-mean / unit-variance over the last axis, no affine.
Tensor standardize_rows(const Tensor& x, double eps = 1e-6);

// 3x3 cross-correlation with zero padding 1; spatial size preserved.
// x: [C_in x H x W], w: [C_out x C_in x 3 x 3], b: [C_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

// [(s^2 C) x H x W] -> [C x sH x sW]; out(c, ys+dy, xs+dx) = in(c s^2 + dy s + dx, y, x).
Tensor pixel_shuffle(const Tensor& x, int s);
// Exact inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& x, int s);

// S[i][j] = <q_i, k_j> / (max(|q_i|, eps) * max(|k_j|, eps)).
Tensor cosine_sim(const Tensor& q, const Tensor& k, double eps = 1e-12);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// x: [... x d] plus bias [d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b);

// Multiplication by a compile-time constant.
Tensor scale(const Tensor& x, double c);

// Arithmetic against a learnable single-element tensor.
Tensor add_scalar_t(const Tensor& x, const Tensor& s);
Tensor mul_scalar_t(const Tensor& x, const Tensor& s);
Tensor div_scalar_t(const Tensor& x, const Tensor& s);
// c - x with constant c.
Tensor sub_from_const(double c, const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// 2-D transpose.
Tensor transpose(const Tensor& x);

// out[r] = x[idx[r]] (rows). Duplicated indices accumulate gradients.
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);

// Column strip [start, start+len) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, int start, int len);

// Horizontal / vertical concatenation of 2-D tensors.
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

// Element permutation: out.flat[i] = x.flat[src[i]].
Tensor permute_flat(const Tensor& x, const std::vector<size_t>& src, Shape out_shape);

// Layout changes between token matrices and channel-first images.
// [(H*W) x C] <-> [C x H x W]; both are exact inverse permutations.
Tensor tokens_to_chw(const Tensor& x, int H, int W);
Tensor chw_to_tokens(const Tensor& x);

// Non-differentiable clamp to [0, 1] (inference only).
Tensor clamp01(const Tensor& x);

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// Compares the analytic gradient of the scalar function `f` at `x` against
// central finite differences with step `h`. The error is relative to the
// largest gradient magnitude (floored at 1), so near-constant functions
// report near-zero error instead of noise ratios.
GradCheckReport grad_check(const std::function<Tensor(Tensor&)>& f, Tensor x, double h = 1e-5,
                           double tol = 1e-5);

}  // namespace atd
