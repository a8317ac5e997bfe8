#pragma once

#include <cstdint>

#include "atd/rng.hpp"
#include "atd/tensor.hpp"

namespace atd {

// An M x d token dictionary. Layer 1 of each block holds learnable tokens;
// later layers hold per-sample refinements derived from the input image.
struct TokenDictionary {
  Tensor tokens;        // [M x d]
  int layer_index = 1;
  bool per_sample = false;

  int size() const { return tokens.dim(0); }
  int width() const { return tokens.dim(1); }
};

// Adaptive refinement parameters: a sigmoid-parameterized blend coefficient
// shared by all layers of a block, and the scalar affine applied after
// standardizing the transposed attention map.
struct AdrParams {
  Tensor sigma_raw;   // [1]; sigma = sigmoid(sigma_raw) in (0, 1)
  Tensor norm_gamma;  // [1]
  Tensor norm_beta;   // [1]

  static AdrParams init();
};

// Learnable dictionary for layer 1: tokens ~ N(0, 0.02^2), i.i.d.
TokenDictionary init_dictionary(int size, int width, uint64_t seed);

// Refines the dictionary from the layer's attention map and output feature:
// candidate tokens are convex combinations of x_next rows weighted by a
// softmax over the standardized transposed attention map, then blended with
// the previous tokens by sigma. Returns a per-sample dictionary for layer
// l+1; gradients flow through attn, x_next, and the previous tokens.
TokenDictionary refine(const TokenDictionary& dict, const Tensor& attn, const Tensor& x_next,
                       const AdrParams& params);

}  // namespace atd
