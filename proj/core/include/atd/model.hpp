#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "atd/attention.hpp"
#include "atd/categorize.hpp"
#include "atd/dictionary.hpp"
#include "atd/tensor.hpp"

namespace atd {

struct ModelConfig {
  int dim = 24;
  int blocks = 1;
  int layers_per_block = 2;
  int dict_size = 8;
  int inner_dim = 4;        // TDCA query/key width (d/r, stored directly)
  int group_size = 16;      // AC-MSA sub-category size n_s
  int window = 8;
  int heads = 2;
  double ffn_ratio = 1.0;
  int scale = 2;
  bool global_residual = true;
  bool use_rel_pos_bias = true;
};

// Named presets: "atd", "atd_light", and the desk-scale "atd_tiny".
ModelConfig preset(const std::string& name, int scale);

struct TransformerLayerParams {
  Tensor norm1_g, norm1_b;
  Tensor norm2_g, norm2_b;
  WindowAttentionParams wmsa;
  TdcaParams tdca;
  AcMsaParams acmsa;
  Tensor ffn_w1, ffn_b1;  // [d x hidden], [hidden]
  Tensor ffn_w2, ffn_b2;  // [hidden x d], [d]
};

struct AtdBlockParams {
  std::vector<TransformerLayerParams> layers;
  TokenDictionary dict;  // learnable layer-1 dictionary
  AdrParams adr;
  Tensor conv_w, conv_b;  // trailing 3x3 conv
};

// When set, forward() stores the categorize labels of one (block, layer).
struct CategoryCapture {
  int block = -1;
  int layer = -1;
  std::vector<int> labels;
  bool captured = false;
};

struct LayerResult {
  Tensor out;
  TokenDictionary dict;
};

// One transformer layer: shared pre-norm feeds the three parallel branches
// (TDCA, AC-MSA, window MSA), their sum joins the residual stream, an FFN
// with its own pre-norm follows, and the dictionary is refined from the
// layer output for the next layer.
LayerResult transformer_layer(const Tensor& x, const TokenDictionary& dict,
                              const TransformerLayerParams& params, const AdrParams& adr,
                              int group_size, int H, int W, Mode mode, uint64_t seed,
                              std::vector<int>* capture_labels = nullptr);

// Threads the dictionary through all layers starting from the block's
// layer-1 dictionary, then applies the trailing conv and block residual.
Tensor atd_block(const Tensor& x, const AtdBlockParams& params, int group_size, int H, int W,
                 Mode mode, uint64_t seed, CategoryCapture* capture = nullptr, int block_index = -1);

class Model {
 public:
  static Model init(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<AtdBlockParams>& blocks() { return blocks_; }
  const std::vector<AtdBlockParams>& blocks() const { return blocks_; }

  // Stable name -> tensor registry in serialization order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return registry_; }

  // [3 x H x W] in [0,1] -> [3 x sH x sW], unclamped. Clamping to [0,1]
  // happens at the inference boundary, not here, so training losses and
  // gradient checks see the raw output.
  Tensor forward(const Tensor& img_lr, Mode mode, uint64_t seed,
                 CategoryCapture* capture = nullptr) const;

  Tensor shallow_w, shallow_b;
  Tensor tail_w, tail_b;

 private:
  ModelConfig cfg_;
  std::vector<AtdBlockParams> blocks_;
  std::vector<std::pair<std::string, Tensor>> registry_;
};

// Exact number of learnable scalars in a registry / model.
size_t count_params(const std::vector<std::pair<std::string, Tensor>>& registry);
size_t count_params(const Model& model);

// Clamps every TDCA temperature of the model into [0.01, 2.0]; called after
// each optimizer step.
void clamp_temperatures(Model& model);

}  // namespace atd
