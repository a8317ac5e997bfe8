#pragma once

#include <cstdint>

#include "atd/ops.hpp"
#include "atd/rng.hpp"
#include "atd/tensor.hpp"

namespace atd {

// Shifted-window multi-head self-attention parameters.
struct WindowAttentionParams {
  Tensor w_q, w_k, w_v, w_o;  // [d x d]
  Tensor b_q, b_k, b_v, b_o;  // [d]
  Tensor rel_pos_bias;        // [(2w-1)^2 x heads]
  int heads = 1;
  int window = 8;
  int shift = 0;  // 0 or window/2
  bool use_rel_pos_bias = true;

  static WindowAttentionParams init(int dim, int heads, int window, int shift, Rng& rng);
};

// Per-window attention with relative position bias. Shifted variant applies
// a cyclic shift of `shift` with a mask excluding cross-boundary pairs.
// Inputs whose H or W is not divisible by the window size are padded
// reflectively and cropped back. x is [N x d] with N == H*W.
Tensor window_msa(const Tensor& x, const WindowAttentionParams& p, int H, int W);

// Token-dictionary cross-attention parameters. Queries and keys are reduced
// to inner_dim channels; tau scales the cosine similarities before softmax
// and is clamped to [0.01, 2.0] after each optimizer step.
struct TdcaParams {
  Tensor w_q, w_k;  // [d x inner_dim]
  Tensor w_v;       // [d x d]
  Tensor tau;       // [1]

  static TdcaParams init(int dim, int inner_dim, Rng& rng);
};

struct TdcaResult {
  Tensor out;   // [N x d]
  Tensor attn;  // [N x M], rows sum to 1
};

// Cross-attention from image tokens to the dictionary: queries from x,
// keys/values from the dictionary. Complexity is linear in the token count.
TdcaResult tdca(const Tensor& x, const Tensor& dict_tokens, const TdcaParams& p);

inline void clamp_tau(const TdcaParams& p) {
  double& t = p.tau[0];
  if (t < 0.01) t = 0.01;
  if (t > 2.0) t = 2.0;
}

}  // namespace atd
