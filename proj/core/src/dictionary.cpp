#include "atd/dictionary.hpp"

#include "atd/errors.hpp"
#include "atd/ops.hpp"

namespace atd {

AdrParams AdrParams::init() {
  AdrParams p;
  p.sigma_raw = Tensor(Shape{1}, {0.0});  // sigmoid(0) = 0.5
  p.norm_gamma = Tensor(Shape{1}, {1.0});
  p.norm_beta = Tensor(Shape{1}, {0.0});
  p.sigma_raw.set_requires_grad(true);
  p.norm_gamma.set_requires_grad(true);
  p.norm_beta.set_requires_grad(true);
  return p;
}

TokenDictionary init_dictionary(int size, int width, uint64_t seed) {
  if (size < 1 || width < 1) {
    throw ContractError("init_dictionary: size and width must be at least 1");
  }
  Rng rng(seed);
  Tensor tokens(Shape{size, width});
  for (size_t i = 0; i < tokens.numel(); ++i) tokens[i] = rng.normal(0.0, 0.02);
  tokens.set_requires_grad(true);
  return TokenDictionary{tokens, 1, false};
}

TokenDictionary refine(const TokenDictionary& dict, const Tensor& attn, const Tensor& x_next,
                       const AdrParams& params) {
  if (attn.ndim() != 2 || x_next.ndim() != 2) {
    throw DimensionError("refine: attn and x_next must be 2-D");
  }
  if (attn.dim(0) != x_next.dim(0)) {
    throw DimensionError("refine: attn rows " + shape_str(attn.shape()) +
                         " do not match x_next rows " + shape_str(x_next.shape()));
  }
  if (attn.dim(1) != dict.tokens.dim(0)) {
    throw DimensionError("refine: attn columns " + shape_str(attn.shape()) +
                         " do not match dictionary size " + shape_str(dict.tokens.shape()));
  }
  if (x_next.dim(1) != dict.tokens.dim(1)) {
    throw DimensionError("refine: feature width " + shape_str(x_next.shape()) +
                         " does not match dictionary width " + shape_str(dict.tokens.shape()));
  }

  // Reversed attention: weights over the N tokens for each dictionary entry.
  Tensor at = transpose(attn);  // [M x N]
  Tensor norm = add_scalar_t(mul_scalar_t(standardize_rows(at), params.norm_gamma),
                             params.norm_beta);
  Tensor weights = softmax(norm);             // rows sum to 1 over N
  Tensor candidate = matmul(weights, x_next); // [M x d], convex in x_next rows

  Tensor sigma = sigmoid(params.sigma_raw);
  Tensor blended = add(mul_scalar_t(candidate, sigma),
                       mul_scalar_t(dict.tokens, sub_from_const(1.0, sigma)));

  return TokenDictionary{blended, dict.layer_index + 1, true};
}

}  // namespace atd
