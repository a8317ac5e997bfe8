#include "atd/categorize.hpp"

#include <algorithm>
#include <cmath>

#include "atd/errors.hpp"
#include "atd/ops.hpp"

namespace atd {

std::vector<int> categorize(const Tensor& attn) {
  if (attn.ndim() != 2) throw DimensionError("categorize: attn must be 2-D, got " + shape_str(attn.shape()));
  const size_t n = static_cast<size_t>(attn.dim(0));
  const size_t m = static_cast<size_t>(attn.dim(1));
  std::vector<int> labels(n);
  const double* a = attn.data();
  for (size_t i = 0; i < n; ++i) {
    const double* row = a + i * m;
    int best = 0;
    double bv = row[0];
    for (size_t j = 1; j < m; ++j) {
      if (row[j] > bv) {
        bv = row[j];
        best = static_cast<int>(j);
      }
    }
    labels[i] = best;
  }
  return labels;
}

CategoryPartition sub_categorize(const std::vector<int>& labels, int group_size, Mode mode,
                                 uint64_t seed) {
  if (group_size <= 0) throw ContractError("sub_categorize: group size must be positive");
  const int n = static_cast<int>(labels.size());
  if (n == 0) throw ContractError("sub_categorize: no tokens");

  int max_label = 0;
  for (int l : labels) {
    if (l < 0) throw ContractError("sub_categorize: negative label");
    max_label = std::max(max_label, l);
  }

  // Bucket by label; buckets keep ascending original order.
  std::vector<std::vector<int>> buckets(static_cast<size_t>(max_label) + 1);
  for (int i = 0; i < n; ++i) buckets[static_cast<size_t>(labels[static_cast<size_t>(i)])].push_back(i);

  if (mode == Mode::train) {
    Rng rng(seed);
    for (auto& b : buckets) rng.shuffle(b);
  }

  CategoryPartition part;
  part.labels = labels;
  part.group_size = group_size;
  part.group_count = (n + group_size - 1) / group_size;
  part.pad_count = part.group_count * group_size - n;
  part.order.reserve(static_cast<size_t>(part.group_count) * group_size);
  for (const auto& b : buckets)
    for (int i : b) part.order.push_back(i);
  // Pads duplicate the final real token; their outputs are dropped on the
  // way back.
  for (int i = 0; i < part.pad_count; ++i) part.order.push_back(part.order[static_cast<size_t>(n) - 1]);

  part.permutation.assign(static_cast<size_t>(n), 0);
  for (int slot = 0; slot < n; ++slot) part.permutation[static_cast<size_t>(part.order[static_cast<size_t>(slot)])] = slot;
  return part;
}

Tensor uncategorize(const Tensor& grouped, const CategoryPartition& partition) {
  if (grouped.ndim() != 2) throw DimensionError("uncategorize: grouped must be 2-D");
  const size_t slots = static_cast<size_t>(partition.group_count) * partition.group_size;
  if (static_cast<size_t>(grouped.dim(0)) != slots) {
    throw ContractError("uncategorize: grouped rows " + std::to_string(grouped.dim(0)) +
                        " do not match " + std::to_string(partition.group_count) + "*" +
                        std::to_string(partition.group_size) + " slots");
  }
  // Each token's output lives at its primary (non-pad) slot.
  return gather_rows(grouped, partition.permutation);
}

AcMsaParams AcMsaParams::init(int dim, int heads, Rng& rng) {
  if (dim % heads != 0) {
    throw ConfigError("ac_msa: dim " + std::to_string(dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  AcMsaParams p;
  p.heads = heads;
  auto linear = [&](int r, int c) {
    Tensor t(Shape{r, c});
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.truncated_normal(0.02);
    t.set_requires_grad(true);
    return t;
  };
  p.w_q = linear(dim, dim);
  p.w_k = linear(dim, dim);
  p.w_v = linear(dim, dim);
  p.b_q = Tensor(Shape{dim});
  p.b_k = Tensor(Shape{dim});
  p.b_v = Tensor(Shape{dim});
  p.b_q.set_requires_grad(true);
  p.b_k.set_requires_grad(true);
  p.b_v.set_requires_grad(true);
  return p;
}

Tensor ac_msa(const Tensor& x, const Tensor& attn, const AcMsaParams& p, int group_size, Mode mode,
              uint64_t seed) {
  if (x.ndim() != 2 || attn.ndim() != 2) throw DimensionError("ac_msa: inputs must be 2-D");
  if (x.dim(0) != attn.dim(0)) {
    throw ContractError("ac_msa: token count " + std::to_string(x.dim(0)) +
                        " does not match attention rows " + std::to_string(attn.dim(0)));
  }
  const int d = x.dim(1);
  if (d % p.heads != 0) {
    throw DimensionError("ac_msa: width " + std::to_string(d) + " not divisible by heads " +
                         std::to_string(p.heads));
  }
  const int dh = d / p.heads;

  // Partition selection is a discrete constant: gradients do not flow
  // through the argmax or the ordering, only through gathered values.
  CategoryPartition part = sub_categorize(categorize(attn), group_size, mode, seed);

  Tensor q = add_bias(matmul(x, p.w_q), p.b_q);
  Tensor k = add_bias(matmul(x, p.w_k), p.b_k);
  Tensor v = add_bias(matmul(x, p.w_v), p.b_v);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> group_outs;
  group_outs.reserve(static_cast<size_t>(part.group_count));
  for (int g = 0; g < part.group_count; ++g) {
    const auto first = part.order.begin() + static_cast<size_t>(g) * part.group_size;
    std::vector<int> gidx(first, first + part.group_size);
    Tensor qg = gather_rows(q, gidx);
    Tensor kg = gather_rows(k, gidx);
    Tensor vg = gather_rows(v, gidx);
    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
      Tensor qh = slice_cols(qg, h * dh, dh);
      Tensor kh = slice_cols(kg, h * dh, dh);
      Tensor vh = slice_cols(vg, h * dh, dh);
      Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      head_outs.push_back(matmul(softmax(logits), vh));
    }
    group_outs.push_back(concat_cols(head_outs));
  }
  return uncategorize(concat_rows(group_outs), part);
}

}  // namespace atd
