#pragma once

#include <cstdint>
#include <vector>

#include "atd/rng.hpp"
#include "atd/tensor.hpp"

namespace atd {

enum class Mode { train, eval };

// Balanced partition of N tokens into groups of exactly group_size slots.
// Tokens are ordered by (category label, intra-category order); the ordering
// is cut into consecutive groups, and the final group is padded by
// duplicating its last real token.
struct CategoryPartition {
  std::vector<int> labels;       // N category labels in [0, M)
  std::vector<int> permutation;  // token index -> slot in the flattened ordering (bijection on [0, N))
  int group_count = 0;
  int group_size = 0;
  int pad_count = 0;
  // slot -> token index for all group_count*group_size slots (pads included).
  std::vector<int> order;
};

// Argmax category per attention row; ties break toward the lowest index.
std::vector<int> categorize(const Tensor& attn);

// Orders tokens by label, shuffling within each category in train mode
// (seeded) and keeping ascending original index in eval mode, then cuts the
// ordering into fixed-size groups.
CategoryPartition sub_categorize(const std::vector<int>& labels, int group_size, Mode mode,
                                 uint64_t seed);

// Inverse of the grouping: scatters rows back to token order and drops the
// padded duplicate slots. grouped is [(group_count*group_size) x d].
Tensor uncategorize(const Tensor& grouped, const CategoryPartition& partition);

// Multi-head self-attention within each sub-category group. Plain
// dot-product attention with 1/sqrt(head_dim) scaling; no positional bias
// and no output projection. Partition indices are non-differentiable;
// gradients flow only through the gathered values.
struct AcMsaParams {
  Tensor w_q, w_k, w_v;  // [d x d]
  Tensor b_q, b_k, b_v;  // [d]
  int heads = 1;

  static AcMsaParams init(int dim, int heads, Rng& rng);
};

Tensor ac_msa(const Tensor& x, const Tensor& attn, const AcMsaParams& p, int group_size, Mode mode,
              uint64_t seed);

}  // namespace atd
